//! Limit-order-book reconstruction and trade-and-quote analytics for
//! South African equity feeds.

pub mod classify;
pub mod cost;
pub mod error;
pub mod feed;
pub mod impact;
pub mod l1;
pub mod lob;
pub mod optim;
pub mod price;
pub mod stylized;
pub mod synth;
pub mod taq;
pub mod time;
pub mod vendor;

pub use error::{Error, Result};
