use crate::error::{Error, Result};
use crate::tensor::{LayerKind, LayerSpec, NetworkSpec, Shape3};

fn parse_err(position: usize, token: &str, reason: impl Into<String>) -> Error {
    Error::Parse {
        position,
        token: token.to_string(),
        reason: reason.into(),
    }
}

fn number(s: &str) -> Option<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn input_shape(tok: &str) -> Option<Shape3> {
    let norm = tok.replace('×', "x");
    if let Some((h, w)) = norm.split_once('x') {
        return Some(Shape3::new(1, number(h)?, number(w)?));
    }
    let n = number(&norm)?;
    let side = (n as f64).sqrt().round() as usize;
    (side * side == n && n > 0).then(|| Shape3::new(1, side, side))
}

fn layer(tok: &str) -> std::result::Result<LayerSpec, String> {
    let norm = tok.replace('×', "x");
    if let Some(rest) = norm.strip_prefix('(') {
        let (dims, tail) = rest
            .split_once(')')
            .ok_or("kernel extent is missing its closing parenthesis")?;
        let (kh, kw) = dims.split_once('x').ok_or("kernel extent must read (kxk)")?;
        let (kh, kw) = (
            number(kh).ok_or("kernel height is not a number")?,
            number(kw).ok_or("kernel width is not a number")?,
        );
        if kh != kw {
            return Err("only square kernels are supported".into());
        }
        let maps = tail
            .strip_suffix('c')
            .and_then(number)
            .ok_or("a kernel extent must be followed by <maps>c")?;
        return Ok(LayerSpec::conv(kh, maps));
    }
    if let Some(n) = norm.strip_suffix("fc").and_then(number) {
        return Ok(LayerSpec::fully_connected(n));
    }
    if let Some(n) = norm.strip_suffix('s').and_then(number) {
        return Ok(LayerSpec::pool(n));
    }
    if let Some(n) = norm.strip_suffix('o').and_then(number) {
        return Ok(LayerSpec::output(n));
    }
    Err("expected (kxk)Nc, Ns, Nfc or No".into())
}

/// Parses `"784 (5x5)6c 2s (5x5)12c 2s 10o"` style descriptions. The first
/// token is the input: a square pixel count or `HxW`. Surrounding brackets
/// are ignored. Token positions in errors count from 0 at the input token.
pub fn parse_architecture(text: &str) -> Result<NetworkSpec> {
    let cleaned = text.trim().trim_start_matches('[').trim_end_matches(']');
    let tokens: Vec<&str> = cleaned.split_whitespace().collect();
    let Some(first) = tokens.first() else {
        return Err(parse_err(0, "", "empty architecture"));
    };
    let input = input_shape(first)
        .ok_or_else(|| parse_err(0, first, "input must be a square pixel count or HxW"))?;
    let mut layers = Vec::with_capacity(tokens.len() - 1);
    for (pos, tok) in tokens.iter().enumerate().skip(1) {
        let spec = layer(tok).map_err(|r| parse_err(pos, tok, r))?;
        layers.push(spec);
        // Validate the prefix so geometry errors point at the offending token.
        let mut probe = layers.clone();
        if !matches!(spec.kind, LayerKind::Output { .. }) {
            probe.push(LayerSpec::output(1));
        }
        NetworkSpec::new(input, probe).map_err(|e| parse_err(pos, tok, e.to_string()))?;
    }
    match layers.last() {
        Some(LayerSpec {
            kind: LayerKind::Output { .. },
            ..
        }) => NetworkSpec::new(input, layers),
        _ => {
            let last = tokens.len() - 1;
            Err(parse_err(last, tokens[last], "architecture must end with an output layer (No)"))
        }
    }
}

/// Inverse of [`parse_architecture`].
pub fn format_architecture(spec: &NetworkSpec) -> String {
    let mut parts = vec![if spec.input.h == spec.input.w {
        (spec.input.h * spec.input.w).to_string()
    } else {
        format!("{}x{}", spec.input.h, spec.input.w)
    }];
    for l in &spec.layers {
        parts.push(match l.kind {
            LayerKind::Conv { kernel, maps } => format!("({kernel}x{kernel}){maps}c"),
            LayerKind::MeanPool { factor } => format!("{factor}s"),
            LayerKind::FullyConnected { neurons } => format!("{neurons}fc"),
            LayerKind::Output { neurons } => format!("{neurons}o"),
        });
    }
    parts.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet_mnist() {
        let spec = parse_architecture("784 (5x5)6c 2s (5x5)12c 2s 10o").unwrap();
        assert_eq!(spec, NetworkSpec::lenet(28, 6, 10).unwrap());
        assert_eq!(format_architecture(&spec), "784 (5x5)6c 2s (5x5)12c 2s 10o");
    }

    #[test]
    fn tich_geometry_and_unicode_times() {
        let spec = parse_architecture("[784 (5×5)10c 2s (5×5)20c 2s 36o]").unwrap();
        assert_eq!(spec.classes(), 36);
        assert_eq!(spec.shapes().unwrap()[3], Shape3::new(20, 4, 4));
    }

    #[test]
    fn pool_that_does_not_tile() {
        match parse_architecture("784 3s") {
            Err(Error::Parse { position, token, .. }) => {
                assert_eq!(position, 1);
                assert_eq!(token, "3s");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_tokens() {
        for (text, pos) in [
            ("783 10o", 0),
            ("784 (5x5)6 10o", 1),
            ("784 (5x3)6c 10o", 1),
            ("784 (5x5)6c 2s", 2),
            ("784 10o 2s", 2),
            ("784 zz", 1),
        ] {
            match parse_architecture(text) {
                Err(Error::Parse { position, .. }) => assert_eq!(position, pos, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn hidden_fully_connected() {
        let spec = parse_architecture("16x16 (3x3)4c 2s 20fc 2o").unwrap();
        assert_eq!(spec.layers.len(), 4);
    }
}
