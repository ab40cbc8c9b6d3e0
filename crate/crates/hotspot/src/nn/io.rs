//! Binary model container: magic "HSDM", format version, architecture
//! descriptor, then per-layer row-major little-endian f32 tensors
//! (weights before biases), each prefixed with its shape.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{ArchSpec, Layer, LayerSpec, Model, NnError};

const MAGIC: &[u8; 4] = b"HSDM";
const VERSION: u32 = 1;

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| NnError::Format("truncated file".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn write_f32s<W: Write>(w: &mut W, vals: impl Iterator<Item = f64>) -> std::io::Result<()> {
    for v in vals {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, NnError> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|_| NnError::Format("truncated tensor data".into()))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn layer_tag(spec: &LayerSpec) -> (u32, u32) {
    match *spec {
        LayerSpec::Conv { out_channels } => (0, out_channels as u32),
        LayerSpec::Pool => (1, 0),
        LayerSpec::Flatten => (2, 0),
        LayerSpec::DenseRelu { out } => (3, out as u32),
        LayerSpec::DenseSoftmax { out } => (4, out as u32),
    }
}

fn spec_from_tag(tag: u32, arg: u32) -> Result<LayerSpec, NnError> {
    Ok(match tag {
        0 => LayerSpec::Conv {
            out_channels: arg as usize,
        },
        1 => LayerSpec::Pool,
        2 => LayerSpec::Flatten,
        3 => LayerSpec::DenseRelu { out: arg as usize },
        4 => LayerSpec::DenseSoftmax { out: arg as usize },
        t => return Err(NnError::Format(format!("unknown layer tag {t}"))),
    })
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    let name = model.arch.name.as_bytes();
    write_u32(&mut w, name.len() as u32)?;
    w.write_all(name)?;
    let (c, h, wd) = model.arch.input;
    write_u32(&mut w, c as u32)?;
    write_u32(&mut w, h as u32)?;
    write_u32(&mut w, wd as u32)?;
    write_u32(&mut w, model.arch.layers.len() as u32)?;
    for spec in &model.arch.layers {
        let (tag, arg) = layer_tag(spec);
        write_u32(&mut w, tag)?;
        write_u32(&mut w, arg)?;
    }
    for layer in &model.layers {
        match layer {
            Layer::Conv(cl) => {
                write_u32(&mut w, cl.w.dim().0 as u32)?;
                write_u32(&mut w, cl.w.dim().1 as u32)?;
                write_f32s(&mut w, cl.w.iter().cloned())?;
                write_u32(&mut w, cl.b.len() as u32)?;
                write_f32s(&mut w, cl.b.iter().cloned())?;
            }
            Layer::Dense(dl) => {
                write_u32(&mut w, dl.w.dim().0 as u32)?;
                write_u32(&mut w, dl.w.dim().1 as u32)?;
                write_f32s(&mut w, dl.w.iter().cloned())?;
                write_u32(&mut w, dl.b.len() as u32)?;
                write_f32s(&mut w, dl.b.iter().cloned())?;
            }
            _ => {}
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model, NnError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| NnError::Format("truncated file".into()))?;
    if &magic != MAGIC {
        return Err(NnError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::Format(format!("unsupported version {version}")));
    }
    let name_len = read_u32(&mut r)? as usize;
    if name_len > 64 {
        return Err(NnError::Format("architecture name too long".into()));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)
        .map_err(|_| NnError::Format("truncated file".into()))?;
    let name =
        String::from_utf8(name).map_err(|_| NnError::Format("non-UTF-8 arch name".into()))?;
    let input = (
        read_u32(&mut r)? as usize,
        read_u32(&mut r)? as usize,
        read_u32(&mut r)? as usize,
    );
    let layer_count = read_u32(&mut r)? as usize;
    if layer_count > 256 {
        return Err(NnError::Format("layer count out of range".into()));
    }
    let mut specs = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let tag = read_u32(&mut r)?;
        let arg = read_u32(&mut r)?;
        specs.push(spec_from_tag(tag, arg)?);
    }
    let arch = ArchSpec {
        name,
        input,
        layers: specs,
    };
    // Walk the descriptor's shape chain and require each stored tensor to
    // match it exactly.
    let mut cur = arch.input;
    let mut layers = Vec::with_capacity(layer_count);
    for spec in &arch.layers {
        match *spec {
            LayerSpec::Conv { out_channels } => {
                let (w, b) = read_tensor_pair(&mut r, out_channels, cur.0 * 9)?;
                layers.push(Layer::Conv(super::ConvLayer {
                    cin: cur.0,
                    cout: out_channels,
                    w,
                    b,
                }));
                cur = (out_channels, cur.1, cur.2);
            }
            LayerSpec::Pool => {
                layers.push(Layer::Pool);
                cur = (cur.0, cur.1 / 2, cur.2 / 2);
            }
            LayerSpec::Flatten => {
                layers.push(Layer::Flatten);
                cur = (cur.0 * cur.1 * cur.2, 1, 1);
            }
            LayerSpec::DenseRelu { out } | LayerSpec::DenseSoftmax { out } => {
                let (w, b) = read_tensor_pair(&mut r, out, cur.0)?;
                layers.push(Layer::Dense(super::DenseLayer {
                    w,
                    b,
                    relu: matches!(spec, LayerSpec::DenseRelu { .. }),
                }));
                cur = (out, 1, 1);
            }
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(NnError::Format("trailing bytes after tensors".into()));
    }
    Ok(Model { arch, layers })
}

fn read_tensor_pair<R: Read>(
    r: &mut R,
    rows: usize,
    cols: usize,
) -> Result<(Array2<f64>, Array1<f64>), NnError> {
    let (sr, sc) = (read_u32(r)? as usize, read_u32(r)? as usize);
    if (sr, sc) != (rows, cols) {
        return Err(NnError::Format(format!(
            "weight shape ({sr}, {sc}) does not match descriptor ({rows}, {cols})"
        )));
    }
    let w = Array2::from_shape_vec((rows, cols), read_f32s(r, rows * cols)?).unwrap();
    let bl = read_u32(r)? as usize;
    if bl != rows {
        return Err(NnError::Format(format!(
            "bias length {bl} does not match descriptor {rows}"
        )));
    }
    let b = Array1::from_vec(read_f32s(r, rows)?);
    Ok((w, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtripped(model: &Model) -> Model {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.hsdm");
        save_model(model, &path).unwrap();
        load_model(&path).unwrap()
    }

    #[test]
    fn roundtrip_preserves_every_tensor_bit_exactly() {
        for arch in [ArchSpec::arch_a(), ArchSpec::arch_b()] {
            let m = Model::new(arch, 77);
            let back = roundtripped(&m);
            assert_eq!(back.arch, m.arch);
            // Stored as f32: compare after one f32 round-trip.
            for (a, b) in m.layers.iter().zip(&back.layers) {
                match (a, b) {
                    (Layer::Conv(ca), Layer::Conv(cb)) => {
                        for (x, y) in ca.w.iter().zip(cb.w.iter()) {
                            assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
                        }
                    }
                    (Layer::Dense(da), Layer::Dense(db)) => {
                        for (x, y) in da.w.iter().zip(db.w.iter()) {
                            assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
                        }
                    }
                    _ => {}
                }
            }
            // Second save of the loaded model is byte-identical.
            let dir = tempfile::tempdir().unwrap();
            let (p1, p2) = (dir.path().join("a"), dir.path().join("b"));
            save_model(&back, &p1).unwrap();
            save_model(&roundtripped(&back), &p2).unwrap();
            assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        }
    }

    #[test]
    fn truncated_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.hsdm");
        let m = Model::new(ArchSpec::arch_a(), 1);
        save_model(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [3usize, 10, 40, bytes.len() / 2, bytes.len() - 1] {
            let short = dir.path().join("short.hsdm");
            std::fs::write(&short, &bytes[..cut]).unwrap();
            assert!(
                matches!(load_model(&short), Err(NnError::Format(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn bad_magic_and_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.hsdm");
        std::fs::write(&path, b"XXXX\x01\x00\x00\x00").unwrap();
        assert!(matches!(load_model(&path), Err(NnError::Format(_))));
        std::fs::write(&path, b"HSDM\x63\x00\x00\x00").unwrap();
        assert!(matches!(load_model(&path), Err(NnError::Format(_))));
    }

    #[test]
    fn descriptor_tensor_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.hsdm");
        let m = Model::new(ArchSpec::arch_a(), 1);
        save_model(&m, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Flip the first conv layer's descriptor out_channels 16 -> 17;
        // stored tensor shapes no longer match.
        let name_len = 4 + 4 + 4 + 1; // magic + version + name_len + "A"
        let hdr = name_len + 12 + 4; // + input dims + layer count
        let arg_off = hdr + 4; // first layer's arg field
        assert_eq!(bytes[arg_off], 16);
        bytes[arg_off] = 17;
        let bad = dir.path().join("bad.hsdm");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load_model(&bad), Err(NnError::Format(_))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.hsdm");
        let m = Model::new(ArchSpec::arch_a(), 1);
        save_model(&m, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_model(&path), Err(NnError::Format(_))));
    }
}
