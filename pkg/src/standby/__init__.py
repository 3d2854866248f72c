"""standby: optimal alternate selection for quota-constrained panels
whose members may drop out before convening."""

__version__ = "0.1.0"
