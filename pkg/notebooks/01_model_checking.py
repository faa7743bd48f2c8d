"""
Model checking the generated work-cell model
============================================

Generate the process model from the bundled skeleton and risk model, check
its well-formedness properties and compare accident freedom with and without
the safety controller.
"""

# %%
# The bundled project: skeleton, risk model and engine settings.
from cobotsafe import mc
from cobotsafe.workcell import accident_freedom, bundled, read

project = bundled()
print([f.id for f in project.rm.factors])

# %%
# The generated MDP interleaves the operator, robot, welder and the
# controller.  Expanding it gives the explicit state space.
x = project.expand_mdp()
print(x.n_states, "states,", x.n_transitions, "transitions")

# %%
# Well-formedness rows; a trailing "(f)" comment marks a row expected false.
for text, f in mc.parse_properties(read("wellformed.props")):
    if text.startswith("filter"):
        continue
    print(f"{str(mc.check(x, f)):5}  {text}")

# %%
# Accident freedom over the unsafe region: the probability of staying free of
# mishaps until the situation is safe again, as (min, mean, max).
controlled = accident_freedom(project.expand_controller())
uncontrolled = accident_freedom(project.expand_baseline())
print("controller   ", ["%.4f" % v for v in controlled])
print("no controller", ["%.4f" % v for v in uncontrolled])

# %%
# Long-run view of the uncontrolled chain: bottom strongly connected
# components and where the process ends up.
base = project.expand_baseline()
pi, comps = mc.steady_state_vector(base)
print(len(comps), "bottom components")
print("long-run probability of a mishap state: %.4f" % mc.steady_state(base, '"mishap"'))
