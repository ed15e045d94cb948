"""Joint unicast / multi-group multicast cell-free massive MIMO: closed-form
SE, penalty-based APG for AP selection and power control, Monte-Carlo
validation and experiment harness."""

__version__ = "0.1.0"
