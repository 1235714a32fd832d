"""Grid of sigma = a x^1 and b = t e_1 over the flat metric, printed as CSV.

The t = 1.2 column is not a valid change (Lbar turns negative) and is
reported as invalid rather than stopping the scan.

    python demos/scan.py
"""
import sys

from finslerlab.catalog import MetricSpec
from finslerlab.verify import scan_grid, scan_to_csv

rows = scan_grid(MetricSpec("euclidean", 2), [0.0, 0.25, 0.5, 1.0], [0.0, 0.3, 0.6, 1.2],
                 samples=10)
sys.stdout.write(scan_to_csv(rows))
