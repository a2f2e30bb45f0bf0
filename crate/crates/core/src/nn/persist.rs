//! Binary weight persistence.
//!
//! Format: magic "RGEN0001", little-endian. A manifest (layer kind, in/out
//! channels, stride or concat source) followed by raw f32 parameter blocks
//! (weights then bias per layer) in manifest order.

use super::{Layer, LayerKind, NetGraph, NnError};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"RGEN0001";

fn kind_code(kind: &LayerKind) -> (u8, u32, u32, u32) {
    match *kind {
        LayerKind::Conv { in_ch, out_ch, stride } => (0, in_ch as u32, out_ch as u32, stride as u32),
        LayerKind::ConvTranspose { in_ch, out_ch } => (1, in_ch as u32, out_ch as u32, 2),
        LayerKind::Relu => (2, 0, 0, 0),
        LayerKind::Sigmoid => (3, 0, 0, 0),
        LayerKind::Concat { src } => (4, 0, 0, src as u32),
    }
}

pub fn save_weights(net: &NetGraph, path: &Path) -> std::io::Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(net.layers.len() as u32)?;
    for l in &net.layers {
        let (k, ic, oc, s) = kind_code(&l.kind);
        buf.write_u8(k)?;
        buf.write_u32::<LittleEndian>(ic)?;
        buf.write_u32::<LittleEndian>(oc)?;
        buf.write_u32::<LittleEndian>(s)?;
    }
    for l in &net.layers {
        for w in &l.weight {
            buf.write_f32::<LittleEndian>(*w as f32)?;
        }
        for b in &l.bias {
            buf.write_f32::<LittleEndian>(*b as f32)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&buf)?;
    std::fs::rename(tmp, path)
}

pub fn load_weights(path: &Path) -> Result<NetGraph, NnError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| NnError::BadWeightFile(e.to_string()))?;
    let mut r = std::io::Cursor::new(bytes);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| NnError::BadWeightFile(e.to_string()))?;
    if &magic != MAGIC {
        return Err(NnError::BadWeightFile("bad magic".into()));
    }
    let n = r.read_u32::<LittleEndian>().map_err(|e| NnError::BadWeightFile(e.to_string()))? as usize;
    let mut kinds = Vec::with_capacity(n);
    for _ in 0..n {
        let k = r.read_u8().map_err(|e| NnError::BadWeightFile(e.to_string()))?;
        let ic = r.read_u32::<LittleEndian>().map_err(|e| NnError::BadWeightFile(e.to_string()))? as usize;
        let oc = r.read_u32::<LittleEndian>().map_err(|e| NnError::BadWeightFile(e.to_string()))? as usize;
        let s = r.read_u32::<LittleEndian>().map_err(|e| NnError::BadWeightFile(e.to_string()))? as usize;
        let kind = match k {
            0 => LayerKind::Conv { in_ch: ic, out_ch: oc, stride: s },
            1 => LayerKind::ConvTranspose { in_ch: ic, out_ch: oc },
            2 => LayerKind::Relu,
            3 => LayerKind::Sigmoid,
            4 => LayerKind::Concat { src: s },
            other => return Err(NnError::BadWeightFile(format!("unknown layer kind {other}"))),
        };
        kinds.push(kind);
    }
    let mut layers = Vec::with_capacity(n);
    for kind in kinds {
        let (nw, nb) = match kind {
            LayerKind::Conv { in_ch, out_ch, .. } | LayerKind::ConvTranspose { in_ch, out_ch } => (in_ch * out_ch * 9, out_ch),
            _ => (0, 0),
        };
        let mut weight = Vec::with_capacity(nw);
        for _ in 0..nw {
            weight.push(r.read_f32::<LittleEndian>().map_err(|e| NnError::BadWeightFile(e.to_string()))? as f64);
        }
        let mut bias = Vec::with_capacity(nb);
        for _ in 0..nb {
            bias.push(r.read_f32::<LittleEndian>().map_err(|e| NnError::BadWeightFile(e.to_string()))? as f64);
        }
        let mut l = match kind {
            LayerKind::Relu => Layer::relu(),
            LayerKind::Sigmoid => Layer::sigmoid(),
            LayerKind::Concat { src } => Layer::concat(src),
            LayerKind::Conv { in_ch, out_ch, stride } => {
                let mut l = Layer::conv(in_ch, out_ch, stride, &mut rand::rngs::mock::StepRng::new(0, 0));
                l.weight.clear();
                l
            }
            LayerKind::ConvTranspose { in_ch, out_ch } => {
                let mut l = Layer::conv_transpose(in_ch, out_ch, &mut rand::rngs::mock::StepRng::new(0, 0));
                l.weight.clear();
                l
            }
        };
        l.weight = weight;
        l.bias = bias;
        l.weight_grad = vec![0.0; l.weight.len()];
        l.bias_grad = vec![0.0; l.bias.len()];
        layers.push(l);
    }
    Ok(NetGraph::new(layers))
}
