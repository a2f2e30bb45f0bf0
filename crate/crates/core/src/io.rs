//! File formats: PPM/PGM images, PFM float maps, trajectory text files, and
//! the binary scene checkpoint. All writes are atomic (write-temp, rename).

use crate::img::{ImageGray, ImageRgb, Mask};
use crate::splat::{CameraView, GaussianPrimitive, Maturity};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Matrix4, Vector3, Vector4};
use std::io::{BufRead, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad file format: {0}")]
    Format(String),
}

/// Write via a temp file in the same directory plus rename, so readers
/// never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp~");
    std::fs::File::create(&tmp)?.write_all(bytes)?;
    std::fs::rename(tmp, path)
}

// ---------------------------------------------------------------- images

/// Binary PPM (P6, maxval 255).
pub fn write_ppm(img: &ImageRgb, path: &Path) -> Result<(), IoError> {
    let mut buf = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    buf.reserve(img.data.len());
    for v in &img.data {
        buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    atomic_write(path, &buf)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<ImageRgb, IoError> {
    let bytes = std::fs::read(path)?;
    let (w, h, off) = parse_pnm_header(&bytes, b"P6")?;
    let need = w * h * 3;
    if bytes.len() < off + need {
        return Err(IoError::Format("truncated PPM".into()));
    }
    let mut img = ImageRgb::zeros(w, h);
    for i in 0..need {
        img.data[i] = bytes[off + i] as f64 / 255.0;
    }
    Ok(img)
}

/// Binary PGM (P5, maxval 255). Used for masks (0/255).
pub fn write_pgm_mask(mask: &Mask, path: &Path) -> Result<(), IoError> {
    let mut buf = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    for v in &mask.data {
        buf.push(if *v { 255 } else { 0 });
    }
    atomic_write(path, &buf)?;
    Ok(())
}

pub fn read_pgm_mask(path: &Path) -> Result<Mask, IoError> {
    let bytes = std::fs::read(path)?;
    let (w, h, off) = parse_pnm_header(&bytes, b"P5")?;
    if bytes.len() < off + w * h {
        return Err(IoError::Format("truncated PGM".into()));
    }
    let mut m = Mask::new(w, h, false);
    for i in 0..w * h {
        m.data[i] = bytes[off + i] >= 128;
    }
    Ok(m)
}

fn parse_pnm_header(bytes: &[u8], magic: &[u8]) -> Result<(usize, usize, usize), IoError> {
    if !bytes.starts_with(magic) {
        return Err(IoError::Format("bad PNM magic".into()));
    }
    let mut fields = Vec::new();
    let mut i = magic.len();
    while fields.len() < 3 && i < bytes.len() {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        fields.push(
            std::str::from_utf8(&bytes[start..i])
                .ok()
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| IoError::Format("bad PNM header field".into()))?,
        );
    }
    if fields.len() < 3 || fields[2] != 255 {
        return Err(IoError::Format("unsupported PNM header".into()));
    }
    Ok((fields[0], fields[1], i + 1))
}

/// Grayscale PFM, scale -1.0 (little-endian), rows bottom-to-top.
pub fn write_pfm(img: &ImageGray, path: &Path) -> Result<(), IoError> {
    let mut buf = format!("Pf\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            buf.write_f32::<LittleEndian>(img.at(x, y) as f32)?;
        }
    }
    atomic_write(path, &buf)?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<ImageGray, IoError> {
    let bytes = std::fs::read(path)?;
    let text_end = {
        let mut newlines = 0;
        let mut i = 0;
        while i < bytes.len() && newlines < 3 {
            if bytes[i] == b'\n' {
                newlines += 1;
            }
            i += 1;
        }
        i
    };
    let header = std::str::from_utf8(&bytes[..text_end]).map_err(|_| IoError::Format("bad PFM header".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some("Pf") {
        return Err(IoError::Format("bad PFM magic".into()));
    }
    let dims: Vec<usize> = lines
        .next()
        .unwrap_or("")
        .split_whitespace()
        .filter_map(|t| t.parse().ok())
        .collect();
    if dims.len() != 2 {
        return Err(IoError::Format("bad PFM dims".into()));
    }
    let scale: f64 = lines.next().unwrap_or("").trim().parse().map_err(|_| IoError::Format("bad PFM scale".into()))?;
    if scale >= 0.0 {
        return Err(IoError::Format("big-endian PFM unsupported".into()));
    }
    let (w, h) = (dims[0], dims[1]);
    let mut r = std::io::Cursor::new(&bytes[text_end..]);
    let mut img = ImageGray::zeros(w, h);
    for y in (0..h).rev() {
        for x in 0..w {
            img.set(x, y, r.read_f32::<LittleEndian>()? as f64);
        }
    }
    Ok(img)
}

// ---------------------------------------------------------------- trajectory

/// One pose per line: id, 16 floats (row-major world_to_cam), fx fy cx cy w h, lane_tag.
pub fn write_trajectory(views: &[(String, CameraView)], path: &Path) -> Result<(), IoError> {
    let mut s = String::new();
    for (id, v) in views {
        s.push_str(id);
        for r in 0..4 {
            for c in 0..4 {
                s.push_str(&format!(" {:.17e}", v.world_to_cam[(r, c)]));
            }
        }
        s.push_str(&format!(
            " {:.17e} {:.17e} {:.17e} {:.17e} {} {} {}\n",
            v.fx, v.fy, v.cx, v.cy, v.width, v.height, v.lane_tag
        ));
    }
    atomic_write(path, s.as_bytes())?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<(String, CameraView)>, IoError> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 24 {
            return Err(IoError::Format(format!("trajectory line has {} fields, want 24", toks.len())));
        }
        let id = toks[0].to_string();
        let mut m = Matrix4::zeros();
        for k in 0..16 {
            m[(k / 4, k % 4)] = toks[1 + k].parse().map_err(|_| IoError::Format("bad matrix float".into()))?;
        }
        let fl: Vec<f64> = toks[17..21]
            .iter()
            .map(|t| t.parse().map_err(|_| IoError::Format("bad intrinsic".into())))
            .collect::<Result<_, _>>()?;
        let w: usize = toks[21].parse().map_err(|_| IoError::Format("bad width".into()))?;
        let h: usize = toks[22].parse().map_err(|_| IoError::Format("bad height".into()))?;
        let mut cam = CameraView::new(fl[0], fl[1], fl[2], fl[3], w, h, m);
        cam.lane_tag = toks[23].to_string();
        out.push((id, cam));
    }
    Ok(out)
}

// ---------------------------------------------------------------- checkpoint

const CKPT_MAGIC: &[u8; 8] = b"RGEGS001";

/// Serialized Gaussian set plus training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCheckpoint {
    pub gaussians: Vec<GaussianPrimitive>,
    pub sh_degree: u8,
    pub desk_scale: f32,
    pub seed: u64,
}

pub fn write_checkpoint(ckpt: &SceneCheckpoint, path: &Path) -> Result<(), IoError> {
    let mut buf: Vec<u8> = Vec::with_capacity(32 + ckpt.gaussians.len() * 64);
    buf.extend_from_slice(CKPT_MAGIC);
    buf.write_u32::<LittleEndian>(ckpt.gaussians.len() as u32)?;
    buf.write_u8(ckpt.sh_degree)?;
    buf.write_f32::<LittleEndian>(ckpt.desk_scale)?;
    buf.write_u64::<LittleEndian>(ckpt.seed)?;
    for g in &ckpt.gaussians {
        for k in 0..3 {
            buf.write_f32::<LittleEndian>(g.position[k] as f32)?;
        }
        for k in 0..4 {
            buf.write_f32::<LittleEndian>(g.rotation[k] as f32)?;
        }
        for k in 0..3 {
            buf.write_f32::<LittleEndian>(g.log_scale[k] as f32)?;
        }
        buf.write_f32::<LittleEndian>(g.opacity_logit as f32)?;
        for k in 0..3 {
            buf.write_f32::<LittleEndian>(g.color[k] as f32)?;
        }
        buf.write_u8(g.maturity as u8)?;
        buf.write_f32::<LittleEndian>(g.grad_accum as f32)?;
        buf.write_u32::<LittleEndian>(g.grad_count)?;
    }
    atomic_write(path, &buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<SceneCheckpoint, IoError> {
    let bytes = std::fs::read(path)?;
    let mut r = std::io::Cursor::new(bytes);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(IoError::Format("bad checkpoint magic".into()));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let sh_degree = r.read_u8()?;
    let desk_scale = r.read_f32::<LittleEndian>()?;
    let seed = r.read_u64::<LittleEndian>()?;
    let mut gaussians = Vec::with_capacity(count);
    for _ in 0..count {
        let mut position = Vector3::zeros();
        for k in 0..3 {
            position[k] = r.read_f32::<LittleEndian>()? as f64;
        }
        let mut rotation = Vector4::zeros();
        for k in 0..4 {
            rotation[k] = r.read_f32::<LittleEndian>()? as f64;
        }
        let mut log_scale = Vector3::zeros();
        for k in 0..3 {
            log_scale[k] = r.read_f32::<LittleEndian>()? as f64;
        }
        let opacity_logit = r.read_f32::<LittleEndian>()? as f64;
        let mut color = Vector3::zeros();
        for k in 0..3 {
            color[k] = r.read_f32::<LittleEndian>()? as f64;
        }
        let maturity = Maturity::from_u8(r.read_u8()?).ok_or_else(|| IoError::Format("bad maturity tag".into()))?;
        let grad_accum = r.read_f32::<LittleEndian>()? as f64;
        let grad_count = r.read_u32::<LittleEndian>()?;
        gaussians.push(GaussianPrimitive {
            position,
            rotation,
            log_scale,
            opacity_logit,
            color,
            maturity,
            grad_accum,
            grad_count,
        });
    }
    Ok(SceneCheckpoint { gaussians, sh_degree, desk_scale, seed })
}
