"""
Validating the controller on the digital twin
=============================================

Drive the twin with random operator wait vectors, check every trace against
the timed validation properties, then replay the same vectors with a second
operator the controller does not track.
"""

# %%
import numpy as np

from cobotsafe import mc, mtl, twin
from cobotsafe.workcell import bundled, read, validation_campaign

project = bundled()
table, _ = project.table()

# %%
# The untimed almost-sure properties become timed ones once "until" gets a
# deadline of one controller cycle.
for _, f in mc.parse_properties(read("validation.pctl")):
    print(mtl.to_string(mtl.translate(f, 0.25)))

# %%
# Wait vectors spread the operator's 20 s of idle time over four slots,
# uniformly on the simplex.
vectors = np.array(twin.gen_test_vectors(1000, 20.0, seed=1))
print("slot means", vectors.mean(axis=0).round(2), "sums", np.ptp(vectors.sum(axis=1)))

# %%
# A small campaign: traces, verdicts, situation coverage and the misuse replay.
c = validation_campaign(project, table, n=20)
print(len(c.traces), "traces,", len(c.failures), "property failures,", c.mishap_traces, "with a mishap")
print("situation coverage %.2f, phase coverage %.2f" % (c.coverage.situation_ratio, c.coverage.phase_ratio))
print(c.coverage.missing()[:5])

# %%
# With a second operator the sensors follow only one of them, so causes
# created by the other can go unnoticed.
for k, factor, idx in c.misuse[:5]:
    print(f"vector {k}: {factor} cause without activation in {len(idx)} records")

# %%
# One trace, as text.
print(c.traces[0].text()[:600])
