pub mod embed;
pub mod mgg;
pub mod sdr;
