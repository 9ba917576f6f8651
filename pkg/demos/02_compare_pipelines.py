# Walkthrough: certify a handful of points with each denoising pipeline.
#
# The task is a 2-D mixture of three Gaussian classes. The base classifier is
# the Bayes rule for that mixture. Each pipeline turns a noisy copy of the
# input into a label, and the smoothed classifier is certified from label
# counts. Counts are kept small here so the script runs in seconds.

import numpy as np

from adds import experiment as ex

cfg = ex.ExperimentConfig(pipelines=ex.standard_grid(sigmas=[1.0]), num_test_points=20,
                          n0=100, n=1000, alpha=0.001)
rows = ex.run_certify(cfg)
summary = ex.summarize(rows, cfg.radius_fractions)
print(ex.tables_markdown(summary))

# Mean certified radius over correctly certified points, per pipeline.

for e in summary["entries"]:
    rs = [r for r in rows if ex.row_label(r) == e["label"] and r["correct"] and not r["abstained"]]
    mean_r = np.mean([r["radius"] for r in rs]) if rs else 0.0
    print(f"{e['label']:32s} mean radius {mean_r:.3f}   {e['mean_wall_time_ms']:.1f} ms/point")
