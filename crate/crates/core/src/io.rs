//! Output formats: CSV number formatting, spectrum CSV and the binary
//! restart file for branches.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Fixed 15-significant-digit scientific notation used in all CSV output.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        // normalizes -0.0 so reruns compare bit-identical
        return "0.00000000000000e0".to_string();
    }
    format!("{x:.14e}")
}

/// Writes `re,im,kind` rows.
pub fn write_spectrum_csv<W: Write>(mut w: W, values: &[Complex64], kind: &str) -> std::io::Result<()> {
    writeln!(w, "re,im,kind")?;
    for z in values {
        writeln!(w, "{},{},{kind}", fmt_num(z.re), fmt_num(z.im))?;
    }
    Ok(())
}

const RESTART_MAGIC: &[u8; 4] = b"DCBR";
const RESTART_VERSION: u32 = 1;

/// Writes full solution vectors as versioned, length-prefixed records:
/// magic `DCBR`, `u32` version, `u64` record count, then per record a `u64`
/// length followed by that many little-endian `f64`.
pub fn write_restart<W: Write>(mut w: W, records: &[Vec<f64>]) -> std::io::Result<()> {
    w.write_all(RESTART_MAGIC)?;
    w.write_all(&RESTART_VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        w.write_all(&(r.len() as u64).to_le_bytes())?;
        for v in r {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_restart<R: Read>(mut r: R) -> Result<Vec<Vec<f64>>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != RESTART_MAGIC {
        return Err(Error::Config("not a restart file".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != RESTART_VERSION {
        return Err(Error::Config(format!("unsupported restart version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut rec = Vec::with_capacity(len.min(1 << 24));
        for _ in 0..len {
            r.read_exact(&mut b8)?;
            rec.push(f64::from_le_bytes(b8));
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(1.0), "1.00000000000000e0");
        assert_eq!(fmt_num(-0.0), fmt_num(0.0));
        assert_eq!(fmt_num(-2.5e-7), "-2.50000000000000e-7");
    }

    proptest! {
        #[test]
        fn restart_round_trip(records in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 0..20), 0..8)) {
            let mut buf = Vec::new();
            write_restart(&mut buf, &records).unwrap();
            let back = read_restart(&buf[..]).unwrap();
            prop_assert_eq!(back, records);
        }

        #[test]
        fn formatted_numbers_parse_back_to_15_digits(x in -1e12f64..1e12) {
            let y: f64 = fmt_num(x).parse().unwrap();
            prop_assert!((x - y).abs() <= 1e-14 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn restart_rejects_garbage() {
        assert!(read_restart(&b"XXXX\x01\0\0\0"[..]).is_err());
    }
}
