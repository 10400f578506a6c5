from ._core import (
    IclcotError,
    auc_binarized,
    autocot_query_loss,
    checkpoint_info,
    least_squares_fit,
    mse_normalized,
    policy_gradient,
    prune,
    run,
    sample_prompt,
    sign_test_p,
    version,
)

__version__ = "0.1.0"
