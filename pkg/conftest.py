import os
import sys

ROOT = os.path.dirname(os.path.abspath(__file__))

# the packages are importable from a source checkout without installing them
for package_dir in ("tensorgrad", "translit"):
    path = os.path.join(ROOT, package_dir)
    if path not in sys.path:
        sys.path.insert(0, path)
