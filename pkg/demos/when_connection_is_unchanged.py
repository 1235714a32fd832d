"""When does the change leave the Cartan connection alone?

For a few changes, prints whether sigma is constant, whether b is parallel,
and the size of the difference tensor.
D vanishes only in the first row, where both conditions hold.

    python demos/when_connection_is_unchanged.py
"""
from finslerlab import catalog as cat
from finslerlab.catalog import FieldSpec, MetricSpec
from finslerlab.change import classify_change
from finslerlab.jets import JetContext

CHANGES = {
    "constant sigma, constant b (flat base)": (
        MetricSpec("euclidean", 2),
        FieldSpec(2, {"kind": "constant", "value": 0.3},
                  {"kind": "constant", "vector": [0.2, -0.1]})),
    "linear sigma, b = 0": (
        cat.default_metrics(2)["riemannian"],
        FieldSpec(2, {"kind": "linear", "coeffs": [0.4, -0.3]})),
    "sigma = 0, linear b": (
        cat.default_metrics(2)["riemannian"],
        FieldSpec(2, b=cat.default_oneforms(2)["linear"])),
    "constant b on a curved base": (
        cat.default_metrics(2)["riemannian"],
        FieldSpec(2, b={"kind": "constant", "vector": [0.2, -0.1]})),
}


def main():
    ctx = JetContext(2, 5)
    print(f"{'change':40} {'homothetic':>10} {'parallel':>9} {'max|D|':>10}")
    for label, (metric, change) in CHANGES.items():
        points = cat.sample_points(metric, change, 30, seed=0)
        c = classify_change(change, metric, points, ctx)
        print(f"{label:40} {str(c.is_homothetic):>10} {str(c.is_b_parallel):>9} "
              f"{c.max_D:10.3e}")


if __name__ == "__main__":
    main()
