import os
import sys
import logging

import numpy as np
import pandas as pd

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import util

logger = logging.getLogger(__name__)

# bookkeeping columns that are not statistics
SKIP = ("rep",)


def transform(df, skip=SKIP):
    """'mean ± std' for every numeric column of a run table"""
    res = pd.DataFrame(columns=["mean ± std", "count"])
    for column in df.columns:
        if column in skip or not np.issubdtype(df[column].dtype, np.number):
            continue
        col = df[column].replace([np.inf, -np.inf], np.nan).dropna()
        if col.empty:
            res.loc[column] = ["nan", 0]
            continue
        std = col.std() if len(col) > 1 else 0.0
        res.loc[column] = [f"{col.mean():.4f} ± {std:.4f}", len(col)]
    return res


def make_report(exp_path):
    """Writes <name>_means.csv next to every run table in exp_path; returns the written names"""
    written = []
    for name, df in util.read_runs(exp_path):
        logger.info("reporting %s", name)
        res = transform(df)
        res.to_csv(os.path.join(exp_path, f"{name}_means.csv"), index_label="column")
        written.append(name)
    if not written:
        logger.warning("no run tables in %s", exp_path)
    return written


if __name__ == '__main__':
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    make_report(sys.argv[1] if len(sys.argv) > 1 else "results")
