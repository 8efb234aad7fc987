//! Structure-string parsing.
//!
//! Networks are described by compact strings such as
//! `128C3(Encoding)-AP2-128C3-AP2-512FC-Voting`: items separated by `-`,
//! where `<n>C<k>` is a convolution with `n` feature maps and a `k x k`
//! kernel, `AP<w>` an average pool of window `w`, `<n>FC` a fully-connected
//! layer of `n` units, and `Voting` the population readout. The first item
//! must be a convolution carrying the `(Encoding)` marker and the last must
//! be `Voting`.

use std::fmt;

use thiserror::Error;

/// One pipeline element as written in a structure string.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    EncodingConv { out_channels: usize, kernel: usize },
    Conv { out_channels: usize, kernel: usize },
    AvgPool { window: usize },
    FullyConnected { units: usize },
    Voting,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::EncodingConv {
                out_channels,
                kernel,
            } => write!(f, "{out_channels}C{kernel}(Encoding)"),
            LayerSpec::Conv {
                out_channels,
                kernel,
            } => write!(f, "{out_channels}C{kernel}"),
            LayerSpec::AvgPool { window } => write!(f, "AP{window}"),
            LayerSpec::FullyConnected { units } => write!(f, "{units}FC"),
            LayerSpec::Voting => write!(f, "Voting"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("empty structure string")]
    Empty,
    #[error("token {position} '{token}': {detail}")]
    Token {
        /// 1-based index of the offending item in the dash-separated list.
        position: usize,
        token: String,
        detail: String,
    },
}

fn token_err(position: usize, token: &str, detail: impl Into<String>) -> ParseError {
    ParseError::Token {
        position,
        token: token.to_string(),
        detail: detail.into(),
    }
}

fn parse_count(s: &str, position: usize, token: &str, what: &str) -> Result<usize, ParseError> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(token_err(position, token, format!("expected a {what} count")));
    }
    let n: usize = s
        .parse()
        .map_err(|_| token_err(position, token, format!("{what} count out of range")))?;
    if n == 0 {
        return Err(token_err(position, token, format!("{what} count must be positive")));
    }
    Ok(n)
}

fn parse_item(token: &str, position: usize) -> Result<LayerSpec, ParseError> {
    if token == "Voting" {
        return Ok(LayerSpec::Voting);
    }
    if let Some(units) = token.strip_suffix("FC") {
        let units = parse_count(units, position, token, "unit")?;
        return Ok(LayerSpec::FullyConnected { units });
    }
    if let Some(window) = token.strip_prefix("AP") {
        let window = parse_count(window, position, token, "window")?;
        return Ok(LayerSpec::AvgPool { window });
    }
    // Convolution: INT 'C' INT, optionally followed by "(Encoding)".
    let Some(c_pos) = token.find('C') else {
        return Err(token_err(
            position,
            token,
            "expected <n>C<k>, AP<w>, <n>FC, or Voting",
        ));
    };
    let out_channels = parse_count(&token[..c_pos], position, token, "feature-map")?;
    let rest = &token[c_pos + 1..];
    let (kernel_str, encoding) = match rest.strip_suffix("(Encoding)") {
        Some(k) => (k, true),
        None => (rest, false),
    };
    let kernel = parse_count(kernel_str, position, token, "kernel")?;
    Ok(if encoding {
        LayerSpec::EncodingConv {
            out_channels,
            kernel,
        }
    } else {
        LayerSpec::Conv {
            out_channels,
            kernel,
        }
    })
}

/// Parse a structure string into its layer list, enforcing the first-layer
/// encoding marker and trailing `Voting` item.
pub fn parse_structure(spec: &str) -> Result<Vec<LayerSpec>, ParseError> {
    let spec = spec.trim();
    if spec.is_empty() {
        return Err(ParseError::Empty);
    }
    let mut layers = Vec::new();
    for (idx, token) in spec.split('-').enumerate() {
        let position = idx + 1;
        let item = parse_item(token, position)?;
        match item {
            LayerSpec::EncodingConv { .. } if idx != 0 => {
                return Err(token_err(
                    position,
                    token,
                    "(Encoding) marker is only valid on the first layer",
                ));
            }
            _ if idx == 0 && !matches!(item, LayerSpec::EncodingConv { .. }) => {
                return Err(token_err(
                    position,
                    token,
                    "first layer must be a convolution with the (Encoding) marker",
                ));
            }
            LayerSpec::Voting if idx + 1 != spec.split('-').count() => {
                return Err(token_err(position, token, "Voting must be the final item"));
            }
            _ => {}
        }
        layers.push(item);
    }
    if !matches!(layers.last(), Some(LayerSpec::Voting)) {
        let position = layers.len();
        let token = spec.split('-').next_back().unwrap_or("");
        return Err(token_err(position, token, "structure must end with Voting"));
    }
    Ok(layers)
}

/// Canonical text form; `parse_structure(print_structure(x)) == x`.
pub fn print_structure(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(|l| l.to_string())
        .collect::<Vec<_>>()
        .join("-")
}
