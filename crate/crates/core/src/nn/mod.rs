//! Dense networks and the reverse-mode gradient engine behind every model.

pub mod dense;
pub mod graph;

pub use dense::{
    finite_diff_check, flatten, forward, grad_inputs, grad_params_through, init_params, unflatten, Activation,
    DenseNet, DenseNetSpec, LayerLayout, LayerParams, NetParams, NetVars,
};
pub use graph::{Graph, Var};
