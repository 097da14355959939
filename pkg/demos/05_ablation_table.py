"""
Information-source ablation at desk scale
=========================================

Trains the seven filter variants on the same small simulated dataset and
prints the mean SI-SDR improvement of each on held-out scenes. This is the
experiment behind acceptance criterion 8. With the default protocol, one
seed takes roughly half an hour on a single CPU core. Pass a smaller epoch
count on the command line for a quicker look.

    python3 demos/05_ablation_table.py [epochs] [seed]
"""
import logging
import sys

from jnfbench.evaluation import format_table
from jnfbench.experiments import DeskProtocol, run_desk, trend_checks

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
protocol = DeskProtocol()
if len(sys.argv) > 1:
    protocol.max_epochs = int(sys.argv[1])
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

result = run_desk(seed, protocol)
print(format_table(list(result.reports.values())))
for key, ok in trend_checks(result.means).items():
    print(f"trend ({key}):", "holds" if ok else "does not hold")
