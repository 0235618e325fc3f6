"""autoforge: a self-contained DCGAN engine built on a numpy autodiff core."""

__version__ = "0.1.0"
