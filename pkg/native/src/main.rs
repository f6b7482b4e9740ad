//! Subprocess server for the range coder: length-framed little-endian
//! requests on stdin, responses on stdout. One decode session may be open at
//! a time; adaptive decoding crosses the pipe once per model step, not per
//! symbol.
//!
//! Requests (op byte first):
//!   0x00 QUIT
//!   0x01 ENCODE       u32 n, then n x { u32 symbol, u32 cdf_len, cdf_len x u32 }
//!   0x02 DECODE_INIT  u32 len, payload bytes
//!   0x03 DECODE_STEP  u32 n, then n x { u32 cdf_len, cdf_len x u32 }
//!   0x04 DECODE_END
//!   0x05 PACK_BITS    u8 bits, u32 count, count x u32
//!   0x06 UNPACK_BITS  u8 bits, u32 count, u32 len, bytes
//!
//! Responses: status u8 (0 ok, 1 error). Ok carries the op's payload; errors
//! carry u8 kind (1 truncated, 2 invalid cdf, 3 symbol range), u32 msg_len,
//! message bytes.

mod coder;

use std::io::{self, Read, Write};

use coder::{pack_bits, unpack_bits, validate_cdf, CoderError, RangeDecoder, RangeEncoder};

fn read_exact(stdin: &mut impl Read, buf: &mut [u8]) -> io::Result<()> {
    stdin.read_exact(buf)
}

fn read_u8(stdin: &mut impl Read) -> io::Result<u8> {
    let mut b = [0u8; 1];
    read_exact(stdin, &mut b)?;
    Ok(b[0])
}

fn read_u32(stdin: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    read_exact(stdin, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u32_vec(stdin: &mut impl Read, n: usize) -> io::Result<Vec<u32>> {
    let mut raw = vec![0u8; n * 4];
    read_exact(stdin, &mut raw)?;
    Ok(raw.chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_ok(stdout: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    stdout.write_all(&[0u8])?;
    stdout.write_all(payload)?;
    stdout.flush()
}

fn write_err(stdout: &mut impl Write, err: &CoderError) -> io::Result<()> {
    let msg = err.message().as_bytes();
    stdout.write_all(&[1u8, err.kind()])?;
    stdout.write_all(&(msg.len() as u32).to_le_bytes())?;
    stdout.write_all(msg)?;
    stdout.flush()
}

fn handle_encode(stdin: &mut impl Read) -> io::Result<Result<Vec<u8>, CoderError>> {
    let n = read_u32(stdin)? as usize;
    let mut enc = RangeEncoder::new();
    let mut failure: Option<CoderError> = None;
    for _ in 0..n {
        let symbol = read_u32(stdin)? as usize;
        let cdf_len = read_u32(stdin)? as usize;
        let cdf = read_u32_vec(stdin, cdf_len)?;
        if failure.is_none() {
            if let Err(e) = validate_cdf(&cdf).and_then(|_| enc.encode(symbol, &cdf)) {
                failure = Some(e); // keep draining the request frame
            }
        }
    }
    Ok(match failure {
        Some(e) => Err(e),
        None => {
            let out = enc.finish();
            let mut payload = (out.len() as u32).to_le_bytes().to_vec();
            payload.extend_from_slice(&out);
            Ok(payload)
        }
    })
}

fn handle_decode_step(
    stdin: &mut impl Read,
    session: &mut Option<RangeDecoder>,
) -> io::Result<Result<Vec<u8>, CoderError>> {
    let n = read_u32(stdin)? as usize;
    let mut out = Vec::with_capacity(n * 4);
    let mut failure: Option<CoderError> = None;
    for _ in 0..n {
        let cdf_len = read_u32(stdin)? as usize;
        let cdf = read_u32_vec(stdin, cdf_len)?;
        if failure.is_some() {
            continue;
        }
        match session {
            None => failure = Some(CoderError::Truncated("no open decode session".into())),
            Some(dec) => match validate_cdf(&cdf).and_then(|_| dec.decode(&cdf)) {
                Ok(sym) => out.extend_from_slice(&(sym as u32).to_le_bytes()),
                Err(e) => failure = Some(e),
            },
        }
    }
    Ok(match failure {
        Some(e) => Err(e),
        None => Ok(out),
    })
}

fn main() -> io::Result<()> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut stdin = stdin.lock();
    let mut stdout = stdout.lock();
    let mut session: Option<RangeDecoder> = None;

    loop {
        let op = match read_u8(&mut stdin) {
            Ok(op) => op,
            Err(_) => return Ok(()), // pipe closed
        };
        match op {
            0x00 => return Ok(()),
            0x01 => match handle_encode(&mut stdin)? {
                Ok(payload) => write_ok(&mut stdout, &payload)?,
                Err(e) => write_err(&mut stdout, &e)?,
            },
            0x02 => {
                let len = read_u32(&mut stdin)? as usize;
                let mut payload = vec![0u8; len];
                read_exact(&mut stdin, &mut payload)?;
                match RangeDecoder::new(payload) {
                    Ok(dec) => {
                        session = Some(dec);
                        write_ok(&mut stdout, &[])?;
                    }
                    Err(e) => {
                        session = None;
                        write_err(&mut stdout, &e)?;
                    }
                }
            }
            0x03 => match handle_decode_step(&mut stdin, &mut session)? {
                Ok(payload) => write_ok(&mut stdout, &payload)?,
                Err(e) => write_err(&mut stdout, &e)?,
            },
            0x04 => {
                session = None;
                write_ok(&mut stdout, &[])?;
            }
            0x05 => {
                let bits = read_u8(&mut stdin)?;
                let count = read_u32(&mut stdin)? as usize;
                let values = read_u32_vec(&mut stdin, count)?;
                match pack_bits(&values, bits) {
                    Ok(out) => {
                        let mut payload = (out.len() as u32).to_le_bytes().to_vec();
                        payload.extend_from_slice(&out);
                        write_ok(&mut stdout, &payload)?;
                    }
                    Err(e) => write_err(&mut stdout, &e)?,
                }
            }
            0x06 => {
                let bits = read_u8(&mut stdin)?;
                let count = read_u32(&mut stdin)? as usize;
                let len = read_u32(&mut stdin)? as usize;
                let mut data = vec![0u8; len];
                read_exact(&mut stdin, &mut data)?;
                match unpack_bits(&data, count, bits) {
                    Ok(values) => {
                        let mut payload = Vec::with_capacity(values.len() * 4);
                        for v in values {
                            payload.extend_from_slice(&v.to_le_bytes());
                        }
                        write_ok(&mut stdout, &payload)?;
                    }
                    Err(e) => write_err(&mut stdout, &e)?,
                }
            }
            other => {
                let e = CoderError::InvalidCdf(format!("unknown opcode {other}"));
                write_err(&mut stdout, &e)?;
            }
        }
    }
}
