//! Command line and HTTP access to trained SDL ensembles and their latent
//! archives. Both front ends go through [`engine::Engine`].

pub mod cli;
pub mod engine;
pub mod error;
pub mod http;
pub mod manifest;

pub use error::{GatewayError, Result};

/// `"b"` for a uniform scale or `"b1,b2,b3"` per level.
pub fn parse_beta(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad scale {p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let beta = match v.as_slice() {
        [b] => [*b; 3],
        [a, b, c] => [*a, *b, *c],
        _ => return Err(format!("expected 1 or 3 scales, got {}", v.len())),
    };
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(format!("non-finite scale in {s:?}"));
    }
    Ok(beta)
}
