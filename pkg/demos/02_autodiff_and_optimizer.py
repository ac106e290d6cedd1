"""Tour of the tape-based autodiff engine and the Adam optimizer.

Records a small computation, walks the tape, checks analytic gradients
against central finite differences, and runs a few optimizer steps.
"""

import numpy as np

from chanfm.autodiff import Tape, finite_difference_check
from chanfm.optim import Adam, count_parameters

print("=== Recording f(W) = mean((softmax(x W) - y)^2) ===")
rng = np.random.default_rng(0)
tape = Tape(np.float64)
x = tape.constant(rng.standard_normal((5, 3)))
w = tape.parameter("w", rng.standard_normal((3, 4)))
y = tape.constant(rng.standard_normal((5, 4)))
d = tape.subtract(tape.softmax(tape.matmul(x, w)), y)
loss = tape.reduce_mean(tape.multiply(d, d))
print(f"loss = {float(loss.value):.6f}, tape holds {len(tape.entries)} entries")
for i, e in enumerate(tape.entries):
    kind = e.op if e.op not in ("param", "const") else f"{e.op}{':' + e.name if e.name else ''}"
    print(f"  [{i}] {kind} -> shape {tape.values[i].shape}")

print("\n=== Gradient vs central finite differences ===")
check = finite_difference_check(tape, loss, tolerance=1e-6, step=1e-5)
for entry in check.entries:
    print(f"  {entry.name}: max rel err {entry.max_rel_err:.2e} "
          f"({'ok' if entry.passed else 'FAIL'})")

print("\n=== Replay determinism ===")
replayed = tape.replay()
print("bit-identical replay:", all(np.array_equal(a, b)
                                   for a, b in zip(replayed, tape.values)))

print("\n=== Ten Adam steps on f(x) = x^2 ===")
opt = Adam(lr=0.05)
params = {"x": np.array(1.0)}
for step in range(10):
    params = opt.step(params, {"x": 2 * params["x"]})
    if step % 3 == 0 or step == 9:
        print(f"  step {step + 1}: x = {float(params['x']):+.6f}")
print("parameter count of a 256->512 dense layer:",
      count_parameters({"w": np.zeros((256, 512)), "b": np.zeros(512)}))
