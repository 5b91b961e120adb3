//! Plain-text network description documents.
//!
//! Grammar (line-oriented; `#` starts a full-line comment, blank lines are
//! skipped, keys may not repeat):
//!
//! ```text
//! name = dpdnet_cifar          # identifier: [A-Za-z0-9_], dots and dashes
//! alpha = 1                    # width multiplier, in (0, 8]
//! multiplier = 6               # channel multiplier m, in 1..=6
//! num_classes = 10
//! input_hw = 32                # expected square input resolution
//! stem = kernel=3 out=32 stride=1
//!
//! [block]                      # one section per stage
//! kind = dpd                   # resnet_bottleneck | psd | mbv2_inverted | dpd
//! out = 16
//! stride = 1                   # optional, default 1
//! repeat = 1                   # optional, default 1
//! mid = 8                      # resnet_bottleneck/psd only
//!
//! [head]                       # optional
//! head_conv = 1280             # pointwise conv width before pooling
//! ```
//!
//! A document with no `[block]` sections instead names a builtin network:
//! only `name`, `alpha`, `multiplier`, `num_classes` and an optional
//! `input_hw` override are allowed, and the stages come from the builtin.
//!
//! [`emit_spec`] always writes the explicit form, is byte-stable, and
//! round-trips: `parse_spec(emit_spec(s)) == s` for every valid spec.

use crate::arch::{builtin_spec, NetworkSpec, StageSpec, StemSpec, MAX_ALPHA};
use crate::blocks::BlockKind;
use crate::error::{Error, Result};

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_usize(line: usize, key: &str, val: &str) -> Result<usize> {
    val.parse::<usize>()
        .map_err(|_| err(line, format!("{key} must be a non-negative integer, got '{val}'")))
}

fn parse_f64(line: usize, key: &str, val: &str) -> Result<f64> {
    val.parse::<f64>()
        .map_err(|_| err(line, format!("{key} must be a number, got '{val}'")))
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

#[derive(Default)]
struct BlockFields {
    line: usize, // line of the [block] header, for error context
    kind: Option<(usize, BlockKind)>,
    out: Option<usize>,
    stride: Option<usize>,
    repeat: Option<usize>,
    mid: Option<usize>,
}

impl BlockFields {
    fn into_stage(self) -> Result<StageSpec> {
        let (_, kind) = self.kind.ok_or_else(|| err(self.line, "block is missing 'kind'"))?;
        let out = self.out.ok_or_else(|| err(self.line, "block is missing 'out'"))?;
        Ok(StageSpec {
            kind,
            out,
            mid: self.mid,
            stride: self.stride.unwrap_or(1),
            repeat: self.repeat.unwrap_or(1),
        })
    }
}

#[derive(Default)]
struct TopFields {
    name: Option<String>,
    alpha: Option<f64>,
    multiplier: Option<usize>,
    num_classes: Option<usize>,
    input_hw: Option<usize>,
    stem: Option<StemSpec>,
}

enum Section {
    Top,
    Block(BlockFields),
    Head,
}

/// Parse a network description document. Errors carry 1-based line numbers.
pub fn parse_spec(text: &str) -> Result<NetworkSpec> {
    let mut top = TopFields::default();
    let mut stages: Vec<StageSpec> = Vec::new();
    let mut head_conv: Option<usize> = None;
    let mut saw_head = false;
    let mut section = Section::Top;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(header) = line.strip_prefix('[') {
            let header = header
                .strip_suffix(']')
                .ok_or_else(|| err(line_no, format!("unterminated section header '{line}'")))?;
            if let Section::Block(b) = std::mem::replace(&mut section, Section::Top) {
                stages.push(b.into_stage()?);
            }
            section = match header {
                "block" => Section::Block(BlockFields { line: line_no, ..Default::default() }),
                "head" => {
                    if saw_head {
                        return Err(err(line_no, "duplicate [head] section"));
                    }
                    saw_head = true;
                    Section::Head
                }
                other => return Err(err(line_no, format!("unknown section '[{other}]'"))),
            };
            continue;
        }
        let (key, val) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(line_no, format!("expected 'key = value', got '{line}'")))?;
        if val.is_empty() {
            return Err(err(line_no, format!("'{key}' has no value")));
        }
        match &mut section {
            Section::Top => parse_top_key(&mut top, line_no, key, val)?,
            Section::Block(b) => parse_block_key(b, line_no, key, val)?,
            Section::Head => match key {
                "head_conv" => {
                    if head_conv.is_some() {
                        return Err(err(line_no, "duplicate key 'head_conv'"));
                    }
                    head_conv = Some(parse_usize(line_no, key, val)?);
                }
                other => return Err(err(line_no, format!("unknown key '{other}' in [head]"))),
            },
        }
    }
    if let Section::Block(b) = section {
        stages.push(b.into_stage()?);
    }

    let name = top.name.ok_or_else(|| err(0, "missing required key 'name'"))?;
    let alpha = top.alpha.ok_or_else(|| err(0, "missing required key 'alpha'"))?;
    let multiplier =
        top.multiplier.ok_or_else(|| err(0, "missing required key 'multiplier'"))?;
    let num_classes =
        top.num_classes.ok_or_else(|| err(0, "missing required key 'num_classes'"))?;

    let spec = if stages.is_empty() {
        // builtin mode: the name selects the architecture
        if top.stem.is_some() {
            return Err(err(0, "'stem' given without any [block] sections".to_string()));
        }
        if saw_head {
            return Err(err(0, "[head] given without any [block] sections".to_string()));
        }
        let mut spec = builtin_spec(&name, alpha, multiplier, num_classes)?;
        if let Some(hw) = top.input_hw {
            spec.input_hw = hw;
        }
        spec
    } else {
        let stem = top.stem.ok_or_else(|| err(0, "missing required key 'stem'"))?;
        let input_hw =
            top.input_hw.ok_or_else(|| err(0, "missing required key 'input_hw'"))?;
        NetworkSpec {
            name,
            alpha,
            multiplier,
            num_classes,
            input_hw,
            stem,
            stages,
            head_conv,
        }
    };
    spec.validate()?;
    Ok(spec)
}

fn parse_top_key(top: &mut TopFields, line_no: usize, key: &str, val: &str) -> Result<()> {
    let dup = |line_no: usize, key: &str| err(line_no, format!("duplicate key '{key}'"));
    match key {
        "name" => {
            if top.name.is_some() {
                return Err(dup(line_no, key));
            }
            if !valid_name(val) {
                return Err(err(
                    line_no,
                    format!("name must be alphanumeric with '_', '-', '.', got '{val}'"),
                ));
            }
            top.name = Some(val.to_string());
        }
        "alpha" => {
            if top.alpha.is_some() {
                return Err(dup(line_no, key));
            }
            let a = parse_f64(line_no, key, val)?;
            if !(a > 0.0 && a <= MAX_ALPHA) {
                return Err(err(line_no, format!("alpha must be in (0, {MAX_ALPHA}], got {val}")));
            }
            top.alpha = Some(a);
        }
        "multiplier" => {
            if top.multiplier.is_some() {
                return Err(dup(line_no, key));
            }
            top.multiplier = Some(parse_usize(line_no, key, val)?);
        }
        "num_classes" => {
            if top.num_classes.is_some() {
                return Err(dup(line_no, key));
            }
            top.num_classes = Some(parse_usize(line_no, key, val)?);
        }
        "input_hw" => {
            if top.input_hw.is_some() {
                return Err(dup(line_no, key));
            }
            top.input_hw = Some(parse_usize(line_no, key, val)?);
        }
        "stem" => {
            if top.stem.is_some() {
                return Err(dup(line_no, key));
            }
            top.stem = Some(parse_stem(line_no, val)?);
        }
        other => return Err(err(line_no, format!("unknown key '{other}'"))),
    }
    Ok(())
}

fn parse_stem(line_no: usize, val: &str) -> Result<StemSpec> {
    let (mut kernel, mut out, mut stride) = (None, None, None);
    for part in val.split_whitespace() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| err(line_no, format!("stem expects kernel=K out=C stride=S, got '{part}'")))?;
        let slot = match k {
            "kernel" => &mut kernel,
            "out" => &mut out,
            "stride" => &mut stride,
            other => return Err(err(line_no, format!("unknown stem field '{other}'"))),
        };
        if slot.is_some() {
            return Err(err(line_no, format!("duplicate stem field '{k}'")));
        }
        *slot = Some(parse_usize(line_no, k, v)?);
    }
    match (kernel, out, stride) {
        (Some(kernel), Some(out), Some(stride)) => Ok(StemSpec { kernel, out, stride }),
        _ => Err(err(line_no, "stem needs all of kernel=, out=, stride=")),
    }
}

fn parse_block_key(b: &mut BlockFields, line_no: usize, key: &str, val: &str) -> Result<()> {
    let dup = |key: &str| err(line_no, format!("duplicate key '{key}' in block"));
    match key {
        "kind" => {
            if b.kind.is_some() {
                return Err(dup(key));
            }
            let kind = BlockKind::parse(val).ok_or_else(|| {
                err(
                    line_no,
                    format!(
                        "unknown block kind '{val}' (expected resnet_bottleneck, psd, \
                         mbv2_inverted, or dpd)"
                    ),
                )
            })?;
            b.kind = Some((line_no, kind));
        }
        "out" => {
            if b.out.is_some() {
                return Err(dup(key));
            }
            b.out = Some(parse_usize(line_no, key, val)?);
        }
        "stride" => {
            if b.stride.is_some() {
                return Err(dup(key));
            }
            let s = parse_usize(line_no, key, val)?;
            if !matches!(s, 1 | 2) {
                return Err(err(line_no, format!("block stride must be 1 or 2, got {s}")));
            }
            b.stride = Some(s);
        }
        "repeat" => {
            if b.repeat.is_some() {
                return Err(dup(key));
            }
            b.repeat = Some(parse_usize(line_no, key, val)?);
        }
        "mid" => {
            if b.mid.is_some() {
                return Err(dup(key));
            }
            b.mid = Some(parse_usize(line_no, key, val)?);
        }
        other => return Err(err(line_no, format!("unknown key '{other}' in block"))),
    }
    Ok(())
}

/// Render a spec as a document in the explicit form. Byte-stable:
/// identical specs produce identical text, and `parse_spec` inverts it.
pub fn emit_spec(spec: &NetworkSpec) -> String {
    let mut s = String::new();
    s.push_str(&format!("name = {}\n", spec.name));
    s.push_str(&format!("alpha = {}\n", spec.alpha));
    s.push_str(&format!("multiplier = {}\n", spec.multiplier));
    s.push_str(&format!("num_classes = {}\n", spec.num_classes));
    s.push_str(&format!("input_hw = {}\n", spec.input_hw));
    s.push_str(&format!(
        "stem = kernel={} out={} stride={}\n",
        spec.stem.kernel, spec.stem.out, spec.stem.stride
    ));
    for st in &spec.stages {
        s.push_str(&format!(
            "\n[block]\nkind = {}\nout = {}\nstride = {}\nrepeat = {}\n",
            st.kind.as_str(),
            st.out,
            st.stride,
            st.repeat
        ));
        if let Some(mid) = st.mid {
            s.push_str(&format!("mid = {mid}\n"));
        }
    }
    if let Some(hc) = spec.head_conv {
        s.push_str(&format!("\n[head]\nhead_conv = {hc}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::BUILTIN_NAMES;

    #[test]
    fn emit_parse_round_trips_every_builtin() {
        for name in BUILTIN_NAMES {
            for (alpha, m) in [(1.0, 1), (1.0, 6), (1.25, 5), (4.0, 2)] {
                let classes = if name == "dpdnet_imagenet" { 1000 } else { 10 };
                let spec = builtin_spec(name, alpha, m, classes).unwrap();
                let text = emit_spec(&spec);
                let parsed = parse_spec(&text).unwrap();
                assert_eq!(parsed, spec, "{name} alpha={alpha} m={m}");
                // emit is byte-stable
                assert_eq!(emit_spec(&parsed), text);
            }
        }
    }

    #[test]
    fn builtin_mode_document() {
        let doc = "# five-line description\nname = dpdnet_cifar\nalpha = 1\nmultiplier = 6\nnum_classes = 10\n";
        let spec = parse_spec(doc).unwrap();
        assert_eq!(spec, builtin_spec("dpdnet_cifar", 1.0, 6, 10).unwrap());
        // unknown builtin fails by name lookup
        let bad = doc.replace("dpdnet_cifar", "resnet18");
        assert!(matches!(parse_spec(&bad), Err(Error::Lookup(_))));
    }

    #[test]
    fn stride_three_names_the_line() {
        let spec = builtin_spec("dpdnet_cifar", 1.0, 1, 10).unwrap();
        let text = emit_spec(&spec);
        let bad = text.replacen("stride = 2", "stride = 3", 1);
        assert_ne!(bad, text);
        match parse_spec(&bad) {
            Err(Error::Parse { line, msg }) => {
                assert!(msg.contains("stride"), "{msg}");
                // the offending line is the stride line of the third block
                let offending: Vec<&str> = bad.lines().collect();
                assert_eq!(offending[line - 1].trim(), "stride = 3");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn alpha_out_of_range_is_a_parse_error_with_line() {
        let doc = "name = x\nalpha = 9\nmultiplier = 1\nnum_classes = 10\n";
        match parse_spec(doc) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("alpha"), "{msg}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let base = emit_spec(&builtin_spec("dpdnet_cifar", 1.0, 1, 10).unwrap());
        let unknown = format!("{base}\nwidth = 3\n");
        assert!(matches!(parse_spec(&unknown), Err(Error::Parse { .. })));
        let dup = format!("alpha = 1\n{base}");
        match parse_spec(&dup) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("duplicate"), "{msg}"),
            other => panic!("expected duplicate-key error, got {other:?}"),
        }
        let missing = base.replace("multiplier = 1\n", "");
        match parse_spec(&missing) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("multiplier"), "{msg}"),
            other => panic!("expected missing-key error, got {other:?}"),
        }
    }

    #[test]
    fn non_integer_channel_is_rejected() {
        let base = emit_spec(&builtin_spec("dpdnet_cifar", 1.0, 1, 10).unwrap());
        let bad = base.replacen("out = 16", "out = 16.5", 1);
        match parse_spec(&bad) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("integer"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn overriding_one_width_changes_exactly_that_stage() {
        let builtin = builtin_spec("dpdnet_cifar", 1.0, 6, 10).unwrap();
        let text = emit_spec(&builtin).replacen("out = 96", "out = 100", 1);
        let spec = parse_spec(&text).unwrap();
        let diffs: Vec<usize> = builtin
            .stages
            .iter()
            .zip(&spec.stages)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(diffs, [4]); // the fifth stage (width 96) and nothing else
        assert_eq!(spec.stages[4].out, 100);
    }

    #[test]
    fn explicit_head_and_mid_round_trip() {
        let spec = builtin_spec("dpdnet_imagenet", 1.0, 6, 1000).unwrap();
        assert!(emit_spec(&spec).contains("[head]\nhead_conv = 1280"));
        let psd = builtin_spec("psdnet50_cifar", 1.0, 1, 10).unwrap();
        let text = emit_spec(&psd);
        assert!(text.contains("mid = 32"));
        assert_eq!(parse_spec(&text).unwrap(), psd);
    }

    #[test]
    fn junk_inputs_error_rather_than_panic() {
        for doc in [
            "",
            "=",
            "[block",
            "[banana]\n",
            "name", // no '='
            "name = \n",
            "stem = kernel=3\nname = x\n",
            "\u{0}\u{1}\u{2}",
            "[head]\nhead_conv = 12\n", // head without blocks, missing keys
        ] {
            assert!(parse_spec(doc).is_err(), "{doc:?}");
        }
    }
}
