from .layers import (
    ConvLayer,
    DenseLayer,
    Workspace,
    conv2d_backward,
    conv2d_backward_batch,
    conv2d_forward,
    conv2d_forward_batch,
    dense_backward,
    dense_forward,
    maxpool2_backward,
    maxpool2_backward_batch,
    maxpool2_forward,
    maxpool2_forward_batch,
    relu,
    relu_backward,
)
from .loss import (
    l2_penalty,
    predicted_grades,
    softmax,
    softmax_cross_entropy,
    softmax_cross_entropy_batch,
)
from .optim import sgd_step
from .gradcheck import (
    GradcheckReport,
    check_gradients,
    compare_gradient_sets,
    max_relative_error,
    numerical_gradient,
)
