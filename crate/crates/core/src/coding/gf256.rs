//! Arithmetic in GF(2^8) modulo x^8 + x^4 + x^3 + x^2 + 1 (0x11D).

const POLY: u16 = 0x11d;

const fn build_tables() -> ([u8; 512], [u8; 256]) {
    let mut exp = [0u8; 512];
    let mut log = [0u8; 256];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        log[x as usize] = i as u8;
        x <<= 1;
        if x & 0x100 != 0 {
            x ^= POLY;
        }
        i += 1;
    }
    // Doubled so `exp[log a + log b]` never needs a reduction.
    while i < 512 {
        exp[i] = exp[i - 255];
        i += 1;
    }
    (exp, log)
}

const TABLES: ([u8; 512], [u8; 256]) = build_tables();
const EXP: [u8; 512] = TABLES.0;
const LOG: [u8; 256] = TABLES.1;

#[inline]
pub fn mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        0
    } else {
        EXP[LOG[a as usize] as usize + LOG[b as usize] as usize]
    }
}

/// Multiplicative inverse. Panics on zero.
#[inline]
pub fn inv(a: u8) -> u8 {
    assert!(a != 0, "inverse of zero in GF(256)");
    EXP[255 - LOG[a as usize] as usize]
}

#[inline]
pub fn div(a: u8, b: u8) -> u8 {
    mul(a, inv(b))
}

/// `acc[i] ^= c * src[i]`
pub fn mul_acc(acc: &mut [u8], src: &[u8], c: u8) {
    debug_assert_eq!(acc.len(), src.len());
    match c {
        0 => {}
        1 => acc.iter_mut().zip(src).for_each(|(a, s)| *a ^= s),
        _ => {
            let lc = LOG[c as usize] as usize;
            for (a, &s) in acc.iter_mut().zip(src) {
                if s != 0 {
                    *a ^= EXP[lc + LOG[s as usize] as usize];
                }
            }
        }
    }
}

/// Lagrange basis coefficients: row `j` gives the weights that evaluate the
/// unique polynomial through `(src[i], y_i)` at `dst[j]`.
pub fn lagrange_rows(src: &[u8], dst: &[u8]) -> Vec<Vec<u8>> {
    dst.iter()
        .map(|&x| {
            src.iter()
                .enumerate()
                .map(|(i, &xi)| {
                    let mut num = 1u8;
                    let mut den = 1u8;
                    for (m, &xm) in src.iter().enumerate() {
                        if m != i {
                            num = mul(num, x ^ xm);
                            den = mul(den, xi ^ xm);
                        }
                    }
                    div(num, den)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Carry-less multiply with reduction, independent of the log tables.
    fn slow_mul(mut a: u8, mut b: u8) -> u8 {
        let mut p = 0u8;
        while b != 0 {
            if b & 1 != 0 {
                p ^= a;
            }
            let carry = a & 0x80 != 0;
            a <<= 1;
            if carry {
                a ^= (POLY & 0xff) as u8;
            }
            b >>= 1;
        }
        p
    }

    #[test]
    fn table_mul_matches_bitwise() {
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                assert_eq!(mul(a, b), slow_mul(a, b), "{a} * {b}");
            }
        }
    }

    #[test]
    fn inverses() {
        for a in 1..=255u8 {
            assert_eq!(mul(a, inv(a)), 1);
        }
    }

    #[test]
    fn lagrange_reproduces_sources() {
        let src = [3u8, 7, 200];
        let rows = lagrange_rows(&src, &src);
        for (j, row) in rows.iter().enumerate() {
            for (i, &c) in row.iter().enumerate() {
                assert_eq!(c, u8::from(i == j));
            }
        }
    }
}
