//! OTFS signal model: transforms, pulses, ambiguity and the channel operator.

mod array;
mod backend;
mod channel;
mod dense;
mod frame;
mod params;
mod pulse;

pub use array::{array_response, centered_index};
pub use backend::{
    BackendOptions, BackendRegistry, ChannelBackend, DenseBackend, TruncatedBackend,
    WindowedBackend, DEFAULT_BACKEND,
};
pub use channel::{
    apply_channel_fast, apply_g, delay_ramp, delay_split, kron_steering, ChannelEngine,
    ChannelOperator, DEFAULT_SUPPORT_HALFWIDTH,
};
pub use dense::{build_psi_dense, build_tf_mixing_dense, DEFAULT_DENSE_CAP};
pub use frame::{isfft_to_tf, sfft_to_dd, DelayDopplerFrame, SymplecticFft, TimeFrequencyFrame};
pub use params::OtfsParams;
pub use pulse::{cross_ambiguity, Pulse, PulseKind};
