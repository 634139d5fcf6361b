//! Split training between the BS and the vehicles: uplink of precoder
//! outputs, loss and gradients at the BS, downlink of per-vehicle
//! gradients, local updates.

pub mod accounting;
pub mod fleet;
pub mod loss;
pub mod messages;
pub mod online;
pub mod server;
pub mod train;
pub mod transport;

pub use accounting::{comm_volume, epoch_bytes, format_mb, iteration_bytes, megabytes};
pub use fleet::{decode_uplink, encode_uplink, Client, CsiMode, EvalStats, Fleet, FleetConfig, FleetSnapshot, IterationStats, TraceEntry, VehicleSpec};
pub use loss::{compute_loss, LossConfig, LossForm, LossValue};
pub use messages::{Body, Message, QuantizedSample};
pub use online::{adapt, apply_change, compare_join, ConvergenceTrace, FleetChange, JoinComparison, OnlineConfig};
pub use server::{server_step, ServerStep};
pub use train::{epoch_batches, split_validation, train, EpochRecord, TrainConfig, TrainReport};
pub use transport::{connect, Endpoint, FaultyEndpoint, Link, TransportKind};
