//! A small set of differentiable operators with hand-written backward
//! passes, enough for the boundary regressor and the recognizer.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod param;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_module, GradEntry, GradReport};
pub use layers::{
    activation_backward, activation_forward, log_softmax, log_softmax_backward, sigmoid, softmax_row, Activation, BatchNorm2d,
    Buffer, Conv2d, GruCell, Linear, MaxPool2d, Mode,
};
pub use loss::{nll_loss, smooth_l1};
pub use optim::{sgd_update, Sgd};
pub use param::{Module, Param};
pub use tensor::{gemm, Tensor};
