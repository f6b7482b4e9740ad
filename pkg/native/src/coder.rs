//! 32-bit range coder with 16-bit probability precision, byte-wise
//! renormalization and carry propagation. Mirrors the reference
//! implementation operation for operation; outputs are byte-identical.

pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;
const TOP: u32 = 1 << 24;

#[derive(Debug)]
pub enum CoderError {
    Truncated(String),
    InvalidCdf(String),
    SymbolOutOfRange(String),
}

impl CoderError {
    pub fn kind(&self) -> u8 {
        match self {
            CoderError::Truncated(_) => 1,
            CoderError::InvalidCdf(_) => 2,
            CoderError::SymbolOutOfRange(_) => 3,
        }
    }
    pub fn message(&self) -> &str {
        match self {
            CoderError::Truncated(m) | CoderError::InvalidCdf(m)
            | CoderError::SymbolOutOfRange(m) => m,
        }
    }
}

pub fn validate_cdf(cdf: &[u32]) -> Result<(), CoderError> {
    if cdf.len() < 2 {
        return Err(CoderError::InvalidCdf("cdf needs at least two entries".into()));
    }
    if cdf[0] != 0 || *cdf.last().unwrap() != TOTAL {
        return Err(CoderError::InvalidCdf(format!(
            "cdf must run from 0 to {TOTAL}, got [{}, {}]", cdf[0], cdf.last().unwrap())));
    }
    for w in cdf.windows(2) {
        if w[1] <= w[0] {
            return Err(CoderError::InvalidCdf("cdf must be strictly increasing".into()));
        }
    }
    Ok(())
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder { low: 0, range: 0xFFFF_FFFF, cache: 0, cache_size: 1, out: Vec::new() }
    }

    pub fn encode(&mut self, symbol: usize, cdf: &[u32]) -> Result<(), CoderError> {
        if symbol + 1 >= cdf.len() {
            return Err(CoderError::SymbolOutOfRange(format!(
                "symbol {symbol} outside cdf with {} entries", cdf.len() - 1)));
        }
        let cum_lo = cdf[symbol];
        let cum_hi = cdf[symbol + 1];
        let r = self.range / TOTAL;
        self.low += (r as u64) * (cum_lo as u64);
        self.range = r * (cum_hi - cum_lo);
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
        Ok(())
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            self.out.push(self.cache.wrapping_add(carry));
            for _ in 1..self.cache_size {
                self.out.push(0xFFu8.wrapping_add(carry));
            }
            self.cache_size = 0;
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low << 8) & 0xFFFF_FFFF;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder {
    data: Vec<u8>,
    pos: usize,
    range: u32,
    code: u32,
}

impl RangeDecoder {
    pub fn new(data: Vec<u8>) -> Result<Self, CoderError> {
        let mut dec = RangeDecoder { data, pos: 0, range: 0xFFFF_FFFF, code: 0 };
        dec.next_byte()?; // leading zero byte from the encoder's first shift
        for _ in 0..4 {
            let b = dec.next_byte()?;
            dec.code = (dec.code << 8) | b as u32;
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u8, CoderError> {
        if self.pos >= self.data.len() {
            return Err(CoderError::Truncated(format!(
                "payload exhausted at byte {}", self.pos)));
        }
        let b = self.data[self.pos];
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, cdf: &[u32]) -> Result<usize, CoderError> {
        let r = self.range / TOTAL;
        let mut value = self.code / r;
        if value >= TOTAL {
            value = TOTAL - 1;
        }
        // largest symbol with cdf[symbol] <= value
        let symbol = cdf.partition_point(|&c| c <= value) - 1;
        let cum_lo = cdf[symbol];
        let cum_hi = cdf[symbol + 1];
        self.code -= r * cum_lo;
        self.range = r * (cum_hi - cum_lo);
        while self.range < TOP {
            let b = self.next_byte()?;
            self.code = (self.code << 8) | b as u32;
            self.range <<= 8;
        }
        Ok(symbol)
    }
}

/// MSB-first fixed-width bit packing, identical to the container's layout.
pub fn pack_bits(values: &[u32], bits: u8) -> Result<Vec<u8>, CoderError> {
    let bits = bits as u32;
    let limit: u64 = 1u64 << bits;
    let mut out = Vec::with_capacity((values.len() * bits as usize + 7) / 8);
    let mut acc: u64 = 0;
    let mut nbits: u32 = 0;
    for &v in values {
        if (v as u64) >= limit {
            return Err(CoderError::SymbolOutOfRange(format!(
                "index {v} out of range for {bits}-bit packing")));
        }
        acc = (acc << bits) | v as u64;
        nbits += bits;
        while nbits >= 8 {
            nbits -= 8;
            out.push(((acc >> nbits) & 0xFF) as u8);
        }
    }
    if nbits > 0 {
        out.push(((acc << (8 - nbits)) & 0xFF) as u8);
    }
    Ok(out)
}

pub fn unpack_bits(data: &[u8], count: usize, bits: u8) -> Result<Vec<u32>, CoderError> {
    let bits = bits as u32;
    if data.len() < (count * bits as usize + 7) / 8 {
        return Err(CoderError::Truncated("bit section truncated".into()));
    }
    let mut out = Vec::with_capacity(count);
    let mut acc: u64 = 0;
    let mut nbits: u32 = 0;
    let mut pos = 0usize;
    let mask: u64 = (1u64 << bits) - 1;
    for _ in 0..count {
        while nbits < bits {
            acc = (acc << 8) | data[pos] as u64;
            pos += 1;
            nbits += 8;
        }
        nbits -= bits;
        out.push(((acc >> nbits) & mask) as u32);
    }
    Ok(out)
}
