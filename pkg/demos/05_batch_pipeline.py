# # The batch pipeline from a bundled config
#
# Circuits sample chi on a planned grid, the PDFs are reconstructed, fits are
# run and a report plus figure-ready CSVs are written to a directory. The same
# run is available as `qdfr pipeline --config bundled:quench_distinct_gaps`.

import json
import tempfile

from qdfr import cli

out = tempfile.mkdtemp(prefix="qdfr_demo_")
cfg = cli.load_config("bundled:quench_distinct_gaps", gamma=0.05, outdir=out)
art = cli.run_pipeline(cfg)
paths = cli.emit_plot_data(out)

fit = art.report["fit"]
print("verdict", art.report["verdict"])
print(json.dumps(fit["hyperplane"], indent=2))
print("dF blue", fit["deltaF_hat"]["blue"], "red", fit["deltaF_hat"]["red"])
print("written:", sorted(p.name for p in paths))
