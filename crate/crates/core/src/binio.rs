//! Little-endian primitives shared by the binary container formats.

use std::io::{self, Read, Write};

pub(crate) fn put_u16(w: &mut impl Write, v: u16) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_f32(w: &mut impl Write, v: f32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn take<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub(crate) fn get_u8(r: &mut impl Read) -> io::Result<u8> {
    Ok(take::<1>(r)?[0])
}

pub(crate) fn get_u16(r: &mut impl Read) -> io::Result<u16> {
    take(r).map(u16::from_le_bytes)
}

pub(crate) fn get_u32(r: &mut impl Read) -> io::Result<u32> {
    take(r).map(u32::from_le_bytes)
}

pub(crate) fn get_u64(r: &mut impl Read) -> io::Result<u64> {
    take(r).map(u64::from_le_bytes)
}

pub(crate) fn get_f32(r: &mut impl Read) -> io::Result<f32> {
    take(r).map(f32::from_le_bytes)
}

pub(crate) fn get_f64(r: &mut impl Read) -> io::Result<f64> {
    take(r).map(f64::from_le_bytes)
}

pub(crate) fn get_bytes<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    take(r)
}
