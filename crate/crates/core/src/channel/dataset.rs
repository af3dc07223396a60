//! Binary dataset container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        8 bytes  "BOPTCHDS"
//! version      u32
//! m_tx n_ue k_sc  u32 × 3
//! count        u64
//! seed         u64
//! profile_id   u8       0 = TDL-A, 1 = TDL-C
//! jitter_dist  u8       0 = gaussian
//! delay_spread_ns, scs_hz, jitter_db, doppler_hz   f64 × 4
//! fingerprint  8 bytes  (first 8 bytes of the SHA-256 config digest)
//! payload      per sample: n_ue × f64 SNR offsets (dB),
//!              then k_sc·m_tx·n_ue × (re f64, im f64) in (K, M, N) order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ChannelDataset, ChannelError, ChannelMatrix, ChannelParams, JitterDist, ProfileKind};
use crate::linalg::C64;

pub const DATASET_MAGIC: &[u8; 8] = b"BOPTCHDS";
pub const DATASET_VERSION: u32 = 1;

pub fn save_dataset(ds: &ChannelDataset, path: impl AsRef<Path>) -> Result<(), ChannelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<ChannelDataset, ChannelError> {
    let mut r = BufReader::new(File::open(path)?);
    read_dataset(&mut r)
}

pub fn write_dataset<W: Write>(ds: &ChannelDataset, w: &mut W) -> Result<(), ChannelError> {
    let p = &ds.params;
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    for d in [p.m_tx, p.n_ue, p.k_sc] {
        let d = u32::try_from(d).map_err(|_| ChannelError::ShapeMismatch("dimension exceeds u32".into()))?;
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&(ds.samples.len() as u64).to_le_bytes())?;
    w.write_all(&ds.seed.to_le_bytes())?;
    w.write_all(&[p.profile.id(), p.jitter_dist.id()])?;
    for v in [p.delay_spread_ns, p.scs_hz, p.jitter_db, p.doppler_hz] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&fingerprint_bytes(&ds.fingerprint()))?;
    for s in &ds.samples {
        for v in s.snr_offset_db() {
            w.write_all(&v.to_le_bytes())?;
        }
        for z in s.as_slice() {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_dataset<R: Read>(r: &mut R) -> Result<ChannelDataset, ChannelError> {
    let mut magic = [0u8; 8];
    read_exact(r, &mut magic, "magic")?;
    if &magic != DATASET_MAGIC {
        return Err(ChannelError::CorruptDataset("bad magic bytes".into()));
    }
    let version = read_u32(r, "version")?;
    if version != DATASET_VERSION {
        return Err(ChannelError::VersionMismatch {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let m_tx = read_u32(r, "m_tx")? as usize;
    let n_ue = read_u32(r, "n_ue")? as usize;
    let k_sc = read_u32(r, "k_sc")? as usize;
    let count = read_u64(r, "count")?;
    let seed = read_u64(r, "seed")?;
    let mut ids = [0u8; 2];
    read_exact(r, &mut ids, "profile id")?;
    let profile = ProfileKind::from_id(ids[0])
        .ok_or_else(|| ChannelError::CorruptDataset(format!("unknown profile id {}", ids[0])))?;
    let jitter_dist = JitterDist::from_id(ids[1])
        .ok_or_else(|| ChannelError::CorruptDataset(format!("unknown jitter distribution id {}", ids[1])))?;
    let delay_spread_ns = read_f64(r, "delay spread")?;
    let scs_hz = read_f64(r, "subcarrier spacing")?;
    let jitter_db = read_f64(r, "jitter")?;
    let doppler_hz = read_f64(r, "doppler")?;
    let mut fp = [0u8; 8];
    read_exact(r, &mut fp, "fingerprint")?;

    if m_tx == 0 || n_ue == 0 || k_sc == 0 {
        return Err(ChannelError::ShapeMismatch(format!(
            "zero dimension in header (M={m_tx}, N={n_ue}, K={k_sc})"
        )));
    }
    if count == 0 {
        return Err(ChannelError::EmptyDataset);
    }
    let params = ChannelParams {
        profile,
        delay_spread_ns,
        m_tx,
        n_ue,
        k_sc,
        scs_hz,
        jitter_db,
        jitter_dist,
        doppler_hz,
    };
    if fingerprint_bytes(&params.fingerprint(seed, count as usize)) != fp {
        return Err(ChannelError::CorruptDataset("header fingerprint does not match contents".into()));
    }
    params
        .validate()
        .map_err(|e| ChannelError::CorruptDataset(format!("header: {e}")))?;

    let entries = k_sc * m_tx * n_ue;
    let mut samples = Vec::with_capacity(count.min(1 << 20) as usize);
    let mut buf = vec![0u8; (n_ue + 2 * entries) * 8];
    for i in 0..count {
        read_exact(r, &mut buf, &format!("sample {i}"))?;
        let mut vals = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let offsets: Vec<f64> = vals.by_ref().take(n_ue).collect();
        let mut h = Vec::with_capacity(entries);
        while let (Some(re), Some(im)) = (vals.next(), vals.next()) {
            h.push(C64::new(re, im));
        }
        let s = ChannelMatrix::new(m_tx, n_ue, k_sc, h, offsets)
            .map_err(|e| ChannelError::CorruptDataset(format!("sample {i}: {e}")))?;
        samples.push(s);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ChannelError::ShapeMismatch(format!(
            "payload longer than {count} samples of shape ({k_sc}, {m_tx}, {n_ue})"
        )));
    }
    ChannelDataset::new(params, seed, samples)
}

fn fingerprint_bytes(hex: &str) -> [u8; 8] {
    let mut out = [0u8; 8];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).unwrap_or(0);
    }
    out
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), ChannelError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => ChannelError::CorruptDataset(format!("truncated while reading {what}")),
        _ => ChannelError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, ChannelError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64, ChannelError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64, ChannelError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}
