//! Weight persistence: a one-line JSON header declaring layer shapes, byte
//! order and a checksum, followed by the flat little-endian 32-bit values in
//! declared layer order (conv kernels, conv biases, then adapters).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Adapter1x1, AdapterSet, ConvWeights, LayerSpec, Level, NetworkSpec, NetworkWeights, TapSet};
use crate::error::{Error, Result};

const FORMAT: &str = "cfw1";

#[derive(Debug, Serialize, Deserialize)]
struct AdapterDecl {
    level: Level,
    in_channels: usize,
    out_channels: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    byte_order: String,
    dtype: String,
    spec: NetworkSpec,
    adapters: Vec<AdapterDecl>,
    value_count: usize,
    checksum_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn value_order(weights: &NetworkWeights) -> Vec<&[f64]> {
    let mut out = Vec::new();
    for c in &weights.convs {
        out.push(c.kernel.as_slice());
        if let Some(b) = &c.bias {
            out.push(b.as_slice());
        }
    }
    for level in Level::ALL {
        if let Some(a) = weights.adapters.get(level) {
            out.push(a.weights.as_slice());
        }
    }
    out
}

/// Writes spec plus weights. Values are stored as 32-bit floats; anything
/// not representable in f32 is rounded on write.
pub fn save_weights(path: &Path, spec: &NetworkSpec, weights: &NetworkWeights) -> Result<()> {
    spec.validate()?;
    let mut payload = Vec::new();
    let mut count = 0usize;
    for slice in value_order(weights) {
        for &v in slice {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
            count += 1;
        }
    }
    let checksum = hex(&Sha256::digest(&payload));
    let adapters = Level::ALL
        .iter()
        .filter_map(|&l| {
            weights.adapters.get(l).as_ref().map(|a| AdapterDecl {
                level: l,
                in_channels: a.in_channels,
                out_channels: a.out_channels,
            })
        })
        .collect();
    let header = Header {
        format: FORMAT.to_string(),
        byte_order: "little".to_string(),
        dtype: "f32".to_string(),
        spec: spec.clone(),
        adapters,
        value_count: count,
        checksum_sha256: checksum,
    };
    let mut bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Format(format!("header serialization failed: {e}")))?;
    bytes.push(b'\n');
    bytes.extend_from_slice(&payload);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn expected_values(spec: &NetworkSpec, adapters: &[AdapterDecl]) -> usize {
    let mut n = 0;
    for layer in &spec.layers {
        if let LayerSpec::Conv {
            kernel,
            in_channels,
            out_channels,
            has_bias,
            ..
        } = *layer
        {
            n += kernel * kernel * in_channels * out_channels;
            if has_bias {
                n += out_channels;
            }
        }
    }
    for a in adapters {
        n += a.in_channels * a.out_channels;
    }
    n
}

fn describe_layer(l: &LayerSpec) -> String {
    match l {
        LayerSpec::Conv {
            kernel,
            stride,
            pad,
            in_channels,
            out_channels,
            has_bias,
        } => format!(
            "conv {kernel}x{kernel} s{stride} p{pad} {in_channels}->{out_channels}{}",
            if *has_bias { " +bias" } else { "" }
        ),
        LayerSpec::Relu => "relu".to_string(),
        LayerSpec::Maxpool { window, stride } => format!("maxpool {window} s{stride}"),
    }
}

fn check_spec_match(expected: &NetworkSpec, found: &NetworkSpec) -> Result<()> {
    if expected.layers.len() != found.layers.len() {
        return Err(Error::Format(format!(
            "layer count mismatch: expected {}, file declares {} (first unmatched layer {})",
            expected.layers.len(),
            found.layers.len(),
            expected.layers.len().min(found.layers.len())
        )));
    }
    for (i, (e, f)) in expected.layers.iter().zip(&found.layers).enumerate() {
        if e != f {
            return Err(Error::Format(format!(
                "layer {i} mismatch: expected [{}], file declares [{}]",
                describe_layer(e),
                describe_layer(f)
            )));
        }
    }
    if expected.input != found.input {
        return Err(Error::Format(format!(
            "input dims mismatch: expected {:?}, file declares {:?}",
            expected.input, found.input
        )));
    }
    if expected.taps != found.taps {
        return Err(Error::Format(format!(
            "tap indices mismatch: expected {:?}, file declares {:?}",
            expected.taps, found.taps
        )));
    }
    Ok(())
}

/// Loads a weight file, optionally verifying the declared spec against an
/// expected one. Returns the spec declared in the header and the weights.
pub fn load_weights(
    path: &Path,
    expected: Option<&NetworkSpec>,
) -> Result<(NetworkSpec, NetworkWeights)> {
    let bytes = fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Format(format!("unknown format '{}'", header.format)));
    }
    if header.byte_order != "little" || header.dtype != "f32" {
        return Err(Error::Format(format!(
            "unsupported encoding {}/{}",
            header.byte_order, header.dtype
        )));
    }
    header.spec.validate()?;
    if let Some(exp) = expected {
        check_spec_match(exp, &header.spec)?;
    }
    let want = expected_values(&header.spec, &header.adapters);
    if header.value_count != want {
        return Err(Error::Format(format!(
            "header declares {} values but spec implies {want}",
            header.value_count
        )));
    }
    let payload = &bytes[newline + 1..];
    if payload.len() != want * 4 {
        return Err(Error::Format(format!(
            "payload truncated: expected {} bytes, found {}",
            want * 4,
            payload.len()
        )));
    }
    let checksum = hex(&Sha256::digest(payload));
    if checksum != header.checksum_sha256 {
        return Err(Error::Format(format!(
            "checksum mismatch: header {}, payload {}",
            header.checksum_sha256, checksum
        )));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
    let mut convs = Vec::new();
    for layer in &header.spec.layers {
        if let LayerSpec::Conv {
            kernel,
            in_channels,
            out_channels,
            has_bias,
            ..
        } = *layer
        {
            let kernel_vals = take(kernel * kernel * in_channels * out_channels);
            let bias = has_bias.then(|| take(out_channels));
            convs.push(ConvWeights {
                kernel: kernel_vals,
                bias,
            });
        }
    }
    let mut adapters: AdapterSet = TapSet::default();
    for decl in &header.adapters {
        *adapters.get_mut(decl.level) = Some(Adapter1x1 {
            in_channels: decl.in_channels,
            out_channels: decl.out_channels,
            weights: take(decl.in_channels * decl.out_channels),
        });
    }
    Ok((header.spec, NetworkWeights { convs, adapters }))
}
