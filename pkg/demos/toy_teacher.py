"""
Why the teacher should not be an EMA
====================================

The scalar toy model ``f(x, sigma) = (sigma_min / sigma) x + (1 - sigma_min / sigma) theta``
fits data concentrated at a single point ``xi``.  Its consistency loss has a
closed form, so we can watch exactly what the gradient does as the noise grid
gets finer.
"""

import numpy as np

from ictlab.toy import ToySpec, toy_descent, toy_grad_limit, toy_loss, toy_loss_limit, toy_scaled_grad

# %%
# With the teacher lagging the student (``theta_minus != theta``) the loss
# settles on a value that no longer depends on ``xi`` at all.

for n in (10**3, 10**4, 10**5, 10**6):
    a = toy_loss(ToySpec(xi=1.0, theta=0.5, theta_minus=0.3, n=n))
    b = toy_loss(ToySpec(xi=-3.0, theta=0.5, theta_minus=0.3, n=n))
    print(f"N={n:>8}  loss(xi=1)={a:.8f}  loss(xi=-3)={b:.8f}")
print(f"limit: {toy_loss_limit(0.5, 0.3):.8f}")

# %%
# Dividing the gradient by the grid spacing shows the failure mode more
# sharply.  With teacher equal to student it converges to a finite value
# pointing toward ``xi``; with any gap it blows up with a sign set by the gap.

print(f"limit with teacher == student: {toy_grad_limit(0.5, 1.0):.6e}")
for n in (10**3, 10**4, 10**5, 10**6):
    same = toy_scaled_grad(ToySpec(1.0, 0.5, 0.5, n=n))
    below = toy_scaled_grad(ToySpec(1.0, 0.5, 0.3, n=n))
    above = toy_scaled_grad(ToySpec(1.0, 0.5, 0.7, n=n))
    print(f"N={n:>8}  same={same:+.6e}  teacher below={below:+.3e}  teacher above={above:+.3e}")

# %%
# Plain gradient descent makes the point in practice: the zero-EMA teacher
# walks to ``xi``, the EMA teacher is still far away after the same budget.

for ema in (0.0, 0.9, 0.99):
    theta = toy_descent(xi=1.0, theta0=-2.0, n=1281, steps=10_000, lr=0.7, ema=ema)
    print(f"teacher EMA {ema:<5} -> theta = {theta:+.5f}")

# %%
# The learned map agrees with the exact one once ``theta`` reaches ``xi``.

sigma = np.array([0.002, 0.1, 1.0, 80.0])
print("f(0, sigma) at theta = xi:", (1 - 0.002 / sigma) * 1.0)
