use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::Array2;

use crate::{Error, Result};

/// Writes `channels x samples` as 32-bit float WAV.
pub fn write_wav(path: &Path, data: &Array2<f64>, sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: data.nrows() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = WavWriter::create(path, spec)?;
    for n in 0..data.ncols() {
        for c in 0..data.nrows() {
            w.write_sample(data[[c, n]] as f32)?;
        }
    }
    w.finalize()?;
    Ok(())
}

pub fn write_mono(path: &Path, data: &[f64], sample_rate: u32) -> Result<()> {
    let a = Array2::from_shape_vec((1, data.len()), data.to_vec()).expect("row vector");
    write_wav(path, &a, sample_rate)
}

/// Reads 32-bit float or 16-bit integer WAV as `channels x samples` plus the sample rate.
pub fn read_wav(path: &Path) -> Result<(Array2<f64>, u32)> {
    let mut r = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let spec = r.spec();
    let ch = spec.channels as usize;
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => r.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, 16) => r
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Config(format!(
                "{}: unsupported WAV encoding {fmt:?}/{bits} bit",
                path.display()
            )))
        }
    };
    let frames = samples.len() / ch.max(1);
    let mut out = Array2::zeros((ch, frames));
    for (i, v) in samples.into_iter().enumerate() {
        out[[i % ch, i / ch]] = v;
    }
    Ok((out, spec.sample_rate))
}

pub fn read_mono(path: &Path) -> Result<(Vec<f64>, u32)> {
    let (a, fs) = read_wav(path)?;
    if a.nrows() != 1 {
        return Err(Error::Config(format!("{}: expected mono, found {} channels", path.display(), a.nrows())));
    }
    Ok((a.row(0).to_vec(), fs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_and_int16() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let data = Array2::from_shape_fn((3, 50), |(c, n)| ((c * 50 + n) as f64 * 0.01).sin() * 0.5);
        write_wav(&p, &data, 16_000).unwrap();
        let (back, fs) = read_wav(&p).unwrap();
        assert_eq!(fs, 16_000);
        assert_eq!(back.dim(), (3, 50));
        for (a, b) in data.iter().zip(back.iter()) {
            assert_eq!(*a as f32 as f64, *b);
        }

        let q = dir.path().join("b.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&q, spec).unwrap();
        for v in [0i16, 16384, -32768] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let (m, fs) = read_mono(&q).unwrap();
        assert_eq!(fs, 8000);
        assert_eq!(m, vec![0.0, 0.5, -1.0]);
    }
}
