//! Graph recurrent networks and their sequential/DAG baselines, attention
//! decoders with coverage and copy, and four task heads (multi-hop reading
//! comprehension, n-ary relation classification, graph-to-text generation
//! and dual-encoder translation), all on a small f64 reverse-mode tape.

macro_rules! named_enum {
    ($ty:ident { $($variant:ident => $name:literal),* $(,)? }) => {
        impl std::str::FromStr for $ty {
            type Err = crate::error::Error;

            fn from_str(s: &str) -> crate::error::Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)*
                    _ => Err(crate::error::Error::Config(format!(concat!("unknown ", stringify!($ty), " `{}`"), s))),
                }
            }
        }

        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self {
                    $($ty::$variant => $name,)*
                })
            }
        }
    };
}

pub mod config;
pub mod decoders;
pub mod encoders;
pub mod error;
pub mod exec;
pub mod gradsuite;
pub mod graph;
pub mod heads;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
