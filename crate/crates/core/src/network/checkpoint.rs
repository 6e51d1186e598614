use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::real::Real;

use super::{KernelStack, LayerSpec, Network, NetworkSpec};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Deserialize)]
struct InputGeometry {
    channels: usize,
    height: usize,
    width: usize,
}

#[derive(Deserialize)]
struct LayerParams {
    weights: Vec<f64>,
    biases: Vec<f64>,
}

/// On-disk form of a trained network.
#[derive(Deserialize)]
pub struct Checkpoint {
    version: u32,
    input: InputGeometry,
    specs: Vec<LayerSpec>,
    layers: Vec<LayerParams>,
}

fn push_reals<T: Real>(out: &mut String, values: &[T]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        // 17 significant digits round-trip every f64
        write!(out, "{:.16e}", v.f64()).unwrap();
    }
    out.push(']');
}

/// Serializes the network as a versioned JSON document.
pub fn checkpoint_json<T: Real>(net: &Network<T>) -> Result<String> {
    let spec = net.spec();
    let mut out = String::new();
    write!(
        out,
        "{{\"version\":{CHECKPOINT_VERSION},\"input\":{{\"channels\":{},\"height\":{},\"width\":{}}},\"specs\":{},\"layers\":[",
        spec.input_channels,
        spec.input_height,
        spec.input_width,
        serde_json::to_string(&spec.layers)?
    )
    .unwrap();
    for (l, ks) in net.params().iter().enumerate() {
        if l > 0 {
            out.push(',');
        }
        out.push_str("{\"weights\":");
        push_reals(&mut out, &ks.weights);
        out.push_str(",\"biases\":");
        push_reals(&mut out, &ks.biases);
        out.push('}');
    }
    out.push_str("]}\n");
    Ok(out)
}

pub fn checkpoint_from_json<T: Real>(text: &str) -> Result<Network<T>> {
    let ck: Checkpoint = serde_json::from_str(text)?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            ck.version
        )));
    }
    if ck.specs.len() != ck.layers.len() {
        return Err(Error::Checkpoint(format!(
            "{} specs but {} parameter layers",
            ck.specs.len(),
            ck.layers.len()
        )));
    }
    let spec = NetworkSpec {
        input_channels: ck.input.channels,
        input_height: ck.input.height,
        input_width: ck.input.width,
        layers: ck.specs,
    };
    spec.shapes()?;
    let mut params = Vec::with_capacity(ck.layers.len());
    for (l, (ls, lp)) in spec.layers.iter().zip(ck.layers).enumerate() {
        let mut ks = KernelStack::<T>::for_layer(ls, spec.input_count(l));
        if !ks.same_layout(lp.weights.len(), lp.biases.len()) {
            return Err(Error::Checkpoint(format!(
                "layer {}: {} weights / {} biases, spec needs {} / {}",
                l + 1,
                lp.weights.len(),
                lp.biases.len(),
                ks.weights.len(),
                ks.biases.len()
            )));
        }
        ks.weights = lp.weights.into_iter().map(T::of).collect();
        ks.biases = lp.biases.into_iter().map(T::of).collect();
        params.push(ks);
    }
    Network::new(spec, params)
}

pub fn save_checkpoint<T: Real>(net: &Network<T>, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_json(net)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Network<T>> {
    checkpoint_from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{InitRule, Sampling};

    fn net() -> Network {
        let spec = NetworkSpec::new(
            8,
            8,
            vec![
                LayerSpec::generative(2, 3, 3).with_sampling(Sampling::Down(2, 2)),
                LayerSpec::generative(1, 2, 3),
            ],
        );
        let mut n = Network::init(spec, 11, InitRule::Glorot).unwrap();
        n.params_mut()[1].biases[0] = -1.0 / 3.0;
        n
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let n = net();
        let text = checkpoint_json(&n).unwrap();
        let back: Network = checkpoint_from_json(&text).unwrap();
        assert_eq!(back.spec(), n.spec());
        for (a, b) in back.params().iter().zip(n.params()) {
            assert_eq!(a.weights, b.weights);
            assert_eq!(a.biases, b.biases);
        }
        assert!(text.contains("-3.3333333333333331e-1"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.json");
        save_checkpoint(&net(), &p).unwrap();
        let back: Network = load_checkpoint(&p).unwrap();
        assert_eq!(back.params(), net().params());
    }

    #[test]
    fn rejects_bad_documents() {
        let good = checkpoint_json(&net()).unwrap();
        let v2 = good.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(checkpoint_from_json::<f64>(&v2), Err(Error::Checkpoint(_))));
        let short = good.replacen("\"biases\":[", "\"biases\":[1.0,", 1);
        assert!(matches!(checkpoint_from_json::<f64>(&short), Err(Error::Checkpoint(_))));
        assert!(checkpoint_from_json::<f64>("{").is_err());
    }
}
