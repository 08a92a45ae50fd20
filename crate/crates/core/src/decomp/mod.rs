//! Class-wise components over a frozen network, learned structured masks and
//! dimension surgery.

mod component;
mod lbmask;
mod mask;
mod surgery;

pub use component::{
    aggregate_predict, component_score, make_components, order_components, Component, UnitId,
};
pub use lbmask::{
    lbmask_loss, lbmask_train, relaxed_surrogate_loss, train_components, GateMode, LbmaskConfig,
    MaskObjective,
};
pub use mask::{init_mask_logits, MaskState, IDENTITY_LOGIT};
pub use surgery::dimension_surgery;

pub(crate) use component::aggregate_ordered;
