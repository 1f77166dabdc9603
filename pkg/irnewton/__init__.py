"""
Matrix-free solvers for smooth nonconvex unconstrained minimization.

The package implements an inexact regularized Newton method, whose trial steps
are truncated CG Newton steps or cubic-regularized Krylov steps, next to an
inexact adaptive cubic regularization baseline. Both only need f, its gradient
and Hessian-vector products. A small benchmark harness runs both solvers on a
built-in problem suite and emits performance-profile data.
"""

__version__ = "0.1.0"
