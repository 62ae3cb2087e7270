use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::embeddings::OffsetReader;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::num::Real;

use super::{Shape, TaggerConfig, TaggerModel, TaggerParams, TunedEmbeddings};

pub const TAGGER_MAGIC: &[u8; 4] = b"MTB1";

/// Writes a tagger checkpoint:
///
/// ```text
/// "MTB1"
/// u32 dim, conv_width, conv_channels, dense_units, tag_count, epochs, freeze
/// f64 lr, u64 seed
/// tag_count × (u32 len, bytes)
/// parameters as f32 in field order: conv_w conv_b dense_w dense_b
///     proj_w proj_b transitions start stop
/// u32 tuned word count (0 when frozen); words; tuned rows as f32
/// ```
pub fn write_tagger<F: Real, W: Write>(model: &TaggerModel<F>, mut w: W) -> Result<()> {
    let c = &model.config;
    w.write_all(TAGGER_MAGIC)?;
    for v in [
        model.dim,
        c.conv_width,
        c.conv_channels,
        c.dense_units,
        model.tags.len(),
        c.epochs,
        usize::from(c.freeze_embeddings),
    ] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&c.lr.to_le_bytes())?;
    w.write_all(&c.seed.to_le_bytes())?;
    for t in &model.tags {
        write_str(&mut w, t)?;
    }
    for s in model.params.slices() {
        write_floats(&mut w, s)?;
    }
    match &model.tuned {
        None => w.write_all(&0u32.to_le_bytes())?,
        Some(t) => {
            w.write_all(&(t.words.len() as u32).to_le_bytes())?;
            for word in &t.words {
                write_str(&mut w, word)?;
            }
            write_floats(&mut w, t.table.as_slice())?;
        }
    }
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn write_floats<F: Real, W: Write>(w: &mut W, xs: &[F]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for x in xs {
        buf.extend_from_slice(&x.as_f32().to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn save_tagger<F: Real>(model: &TaggerModel<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(f);
    write_tagger(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_tagger<F: Real, R: Read>(reader: R) -> Result<TaggerModel<F>> {
    let mut r = OffsetReader::new(reader);
    r.expect_magic(TAGGER_MAGIC)?;
    let mut h = [0usize; 7];
    for (v, what) in h.iter_mut().zip(["dim", "conv width", "channels", "units", "tag count", "epochs", "freeze"]) {
        *v = r.u32(what)? as usize;
    }
    let [dim, width, channels, units, n_tags, epochs, freeze] = h;
    let lr = f64::from_bits(r.u64("lr")?);
    let seed = r.u64("seed")?;
    let config = TaggerConfig {
        conv_width: width,
        conv_channels: channels,
        dense_units: units,
        lr,
        epochs,
        freeze_embeddings: freeze != 0,
        seed,
    };
    config.validate().map_err(|e| r.fail(e.to_string()))?;
    if dim == 0 || n_tags == 0 {
        return Err(r.fail("dim and tag count must be >= 1"));
    }
    let mut tags = Vec::with_capacity(n_tags.min(1 << 16));
    for _ in 0..n_tags {
        tags.push(r.string("tag")?);
    }
    let shape = Shape {
        dim,
        width,
        channels,
        units,
        tags: n_tags,
    };
    let mut params = TaggerParams::<F>::zeros(shape);
    for (slot, name) in params.slices_mut().into_iter().zip(super::PARAM_NAMES) {
        let v = r.floats::<F>(slot.len(), name)?;
        slot.copy_from_slice(&v);
    }
    let n_tuned = r.u32("tuned word count")? as usize;
    let tuned = if n_tuned == 0 {
        None
    } else {
        let mut words = Vec::with_capacity(n_tuned.min(1 << 20));
        for _ in 0..n_tuned {
            words.push(r.string("tuned word")?);
        }
        let table = Matrix::from_vec(n_tuned, dim, r.floats(n_tuned * dim, "tuned rows")?);
        Some(TunedEmbeddings::new(words, table))
    };
    r.expect_eof()?;
    Ok(TaggerModel {
        config,
        dim,
        tags,
        params,
        tuned,
    })
}

pub fn load_tagger<F: Real>(path: impl AsRef<Path>) -> Result<TaggerModel<F>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    read_tagger(BufReader::new(f))
}
