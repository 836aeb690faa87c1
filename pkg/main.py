import sys

from horizon_rl.cli import main

if __name__ == "__main__":
    # 例: python main.py verify --corpus lemmas-deterministic --out reports.csv
    sys.exit(main())
