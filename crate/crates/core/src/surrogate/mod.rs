//! Neural surrogate predictor: residual datasets, networks and training.

mod bank;
mod dataset;
mod net;
mod nsp;

pub use bank::train_bank;
pub use dataset::{
    euler_segment, generate_dataset, reference_segment, residual, DatasetGrid, ResidualDataset, Sample,
};
pub use net::{Adam, AdamConfig, FeedForwardNet, LayerDocument, Workspace};
pub use nsp::{
    euler_cycle, layer_widths, train, BankRecord, CyclePrediction, NetRecord, Norm, NspBank, NspBankDocument,
    NspDocument, NspModel, StateNet,
    StateTrainReport, TrainConfig, TrainReport, NSP_FORMAT_VERSION,
};
