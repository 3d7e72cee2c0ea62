//! `MVDF` frame container: magic, `u32` version, `u32` width, `u32` height,
//! `u32` frame count, then `H·W·3` RGB bytes per frame, all little-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::frame::Frame;

pub const MAGIC: &[u8; 4] = b"MVDF";
pub const VERSION: u32 = 1;

pub fn write_frames<W: Write>(w: &mut W, frames: &[Frame]) -> Result<()> {
    let (h, wd) = frames.first().map_or((0, 0), |f| (f.height(), f.width()));
    if frames.iter().any(|f| f.height() != h || f.width() != wd) {
        return Err(Error::DimensionMismatch("frames differ in size".into()));
    }
    w.write_all(MAGIC)?;
    for v in [VERSION as usize, wd, h, frames.len()] {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} exceeds u32")))?;
        w.write_all(&v.to_le_bytes())?;
    }
    for f in frames {
        w.write_all(f.as_bytes())?;
    }
    Ok(())
}

pub fn read_frames<R: Read>(r: &mut R) -> Result<Vec<Frame>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad frame container magic {magic:?}"
        )));
    }
    let mut header = [0u32; 4];
    for v in &mut header {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *v = u32::from_le_bytes(b);
    }
    let [version, width, height, count] = header.map(|v| v as usize);
    if version != VERSION as usize {
        return Err(Error::Format(format!(
            "unsupported container version {version}"
        )));
    }
    let mut frames = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let mut data = vec![0u8; width * height * 3];
        r.read_exact(&mut data)?;
        frames.push(Frame::from_raw(height, width, data)?);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mut f = Frame::new(2, 3);
        f.set_pixel(1, 2, [1, 2, 3]);
        let mut buf = Vec::new();
        write_frames(&mut buf, &[f.clone(), f.clone()]).unwrap();
        assert_eq!(&buf[..4], b"MVDF");
        assert_eq!(
            &buf[4..20],
            &[1, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]
        );
        assert_eq!(buf.len(), 20 + 2 * 18);
        assert_eq!(
            read_frames(&mut buf.as_slice()).unwrap(),
            vec![f.clone(), f]
        );
    }

    #[test]
    fn truncated_and_bad_magic() {
        let mut buf = Vec::new();
        write_frames(&mut buf, &[Frame::new(2, 2)]).unwrap();
        assert!(read_frames(&mut &buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(matches!(
            read_frames(&mut buf.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
