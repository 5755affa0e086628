use num_bigint::BigInt;
use num_rational::BigRational;

use super::ParseError;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    /// Exact value and whether it was written without a fraction or exponent.
    Num(BigRational, bool),
    Prime,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Eq,
    NotEq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

/// Tokens of one line; `#` starts a comment.
pub fn lex_line(text: &str, line: usize) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        let push = |out: &mut Vec<Token>, tok| out.push(Token { tok, line, col });
        match c {
            '#' => break,
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                push(&mut out, Tok::Ident(chars[start..i].iter().collect()));
                continue;
            }
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let (value, integral, len) = number(&chars[i..]).ok_or_else(|| ParseError::syntax(line, col, "malformed number"))?;
                push(&mut out, Tok::Num(value, integral));
                i += len;
                continue;
            }
            '\'' => push(&mut out, Tok::Prime),
            '+' => push(&mut out, Tok::Plus),
            '-' => push(&mut out, Tok::Minus),
            '*' => push(&mut out, Tok::Star),
            '/' => push(&mut out, Tok::Slash),
            '^' => push(&mut out, Tok::Caret),
            '(' => push(&mut out, Tok::LParen),
            ')' => push(&mut out, Tok::RParen),
            '[' => push(&mut out, Tok::LBracket),
            ']' => push(&mut out, Tok::RBracket),
            '{' => push(&mut out, Tok::LBrace),
            '}' => push(&mut out, Tok::RBrace),
            ',' => push(&mut out, Tok::Comma),
            '=' => push(&mut out, Tok::Eq),
            '!' if chars.get(i + 1) == Some(&'=') => {
                push(&mut out, Tok::NotEq);
                i += 2;
                continue;
            }
            other => return Err(ParseError::syntax(line, col, format!("unexpected character '{other}'"))),
        }
        i += 1;
    }
    Ok(out)
}

/// Decimal literal with optional fraction and exponent, as an exact rational.
fn number(chars: &[char]) -> Option<(BigRational, bool, usize)> {
    let mut i = 0;
    let mut digits = String::new();
    let mut scale: i64 = 0;
    let mut integral = true;
    while i < chars.len() && chars[i].is_ascii_digit() {
        digits.push(chars[i]);
        i += 1;
    }
    if i < chars.len() && chars[i] == '.' {
        integral = false;
        i += 1;
        while i < chars.len() && chars[i].is_ascii_digit() {
            digits.push(chars[i]);
            scale -= 1;
            i += 1;
        }
    }
    if digits.is_empty() {
        return None;
    }
    if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
        let mut j = i + 1;
        let mut exp = String::new();
        if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
            exp.push(chars[j]);
            j += 1;
        }
        let start = j;
        while j < chars.len() && chars[j].is_ascii_digit() {
            exp.push(chars[j]);
            j += 1;
        }
        if j > start {
            scale += exp.parse::<i64>().ok()?;
            integral = false;
            i = j;
        }
    }
    if i < chars.len() && (chars[i].is_ascii_alphabetic() || chars[i] == '_') {
        return None;
    }
    let mantissa: BigInt = digits.parse().ok()?;
    if scale.unsigned_abs() > 400 {
        return None;
    }
    let ten = BigInt::from(10);
    let p = num_traits::pow(ten, scale.unsigned_abs() as usize);
    let value = if scale >= 0 {
        BigRational::from_integer(mantissa * p)
    } else {
        BigRational::new(mantissa, p)
    };
    Some((value, integral, i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::Zero;

    fn toks(s: &str) -> Vec<Tok> {
        lex_line(s, 1).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn decimals_are_exact() {
        assert_eq!(
            toks("0.25 1e-3"),
            vec![
                Tok::Num(BigRational::new(1.into(), 4.into()), false),
                Tok::Num(BigRational::new(1.into(), 1000.into()), false)
            ]
        );
    }

    #[test]
    fn comments_and_primes() {
        assert_eq!(
            toks("x'' != 0 # note"),
            vec![Tok::Ident("x".into()), Tok::Prime, Tok::Prime, Tok::NotEq, Tok::Num(BigRational::zero(), true)]
        );
    }

    #[test]
    fn bad_character_has_column() {
        let e = lex_line("eq x' = $", 3).unwrap_err();
        assert_eq!((e.line, e.col), (3, 9));
    }
}
