use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use hjblab_ffi::*;

const FUCIK: &str = r#"
[operator.preset]
kind = "fucik"
a = 0.5
b = 1.5
[domain]
extents = [[0, "pi"]]
n = [100]
"#;

fn build(text: &str) -> (HjbStatus, *mut HjbProblem) {
    let c = CString::new(text).unwrap();
    let mut p = ptr::null_mut();
    let s = unsafe { hjb_problem_new(c.as_ptr(), &mut p) };
    (s, p)
}

fn last_error() -> String {
    let e = hjb_last_error();
    assert!(!e.is_null());
    unsafe { CStr::from_ptr(e) }.to_string_lossy().into_owned()
}

#[test]
fn eigenvalues_and_threshold() {
    let (s, p) = build(FUCIK);
    assert_eq!(s, HjbStatus::Ok);
    unsafe {
        assert_eq!(hjb_problem_dim(p), 1);
        let n = hjb_problem_len(p);
        assert!(n > 90);
        let (mut lp, mut lm) = (0.0, 0.0);
        assert_eq!(hjb_problem_eigenvalues(p, &mut lp, &mut lm), HjbStatus::Ok);
        assert!((lp + 0.5).abs() < 1e-3 && (lm - 0.5).abs() < 1e-3);

        let mut ts = f64::NAN;
        assert_eq!(hjb_problem_tstar(p, 1e-3, &mut ts), HjbStatus::Ok);
        assert!(ts.abs() < 2e-3, "{ts}");

        let mut v = HjbVerdict::Inconclusive;
        assert_eq!(hjb_problem_solvable(p, 0.5, &mut v), HjbStatus::Ok);
        assert_eq!(v, HjbVerdict::Solvable);
        assert_eq!(hjb_problem_solvable(p, -0.5, &mut v), HjbStatus::Ok);
        assert_eq!(v, HjbVerdict::NoSolution);
        hjb_problem_free(p);
    }
}

#[test]
fn census_writes_solutions_that_solve() {
    let (_, p) = build(FUCIK);
    unsafe {
        let n = hjb_problem_len(p);
        let mut count = 0usize;
        assert_eq!(hjb_problem_census(p, 1.0, 8, 3, ptr::null_mut(), 0, &mut count), HjbStatus::Ok);
        assert_eq!(count, 2);
        let mut sols = vec![0.0; 2 * n];
        assert_eq!(hjb_problem_census(p, 1.0, 8, 3, sols.as_mut_ptr(), 2, &mut count), HjbStatus::Ok);
        let mut phi = vec![0.0; n];
        assert_eq!(hjb_problem_phi(p, phi.as_mut_ptr(), n), HjbStatus::Ok);
        let mut fu = vec![0.0; n];
        for u in sols.chunks(n) {
            assert_eq!(hjb_problem_apply(p, u.as_ptr(), fu.as_mut_ptr(), n), HjbStatus::Ok);
            let res = fu.iter().zip(&phi).map(|(f, q)| (f - q).abs()).fold(0.0, f64::max);
            assert!(res < 1e-6, "residual {res}");
        }
        hjb_problem_free(p);
    }
}

#[test]
fn nodes_are_row_major() {
    let (_, p) = build(
        r#"
[operator.preset]
kind = "fucik"
dim = 2
a = 11.0
b = 13.0
[domain]
extents = [[0, 1], [0, 2]]
n = [5, 5]
"#,
    );
    assert!(!p.is_null(), "{}", last_error());
    unsafe {
        let n = hjb_problem_len(p);
        let mut xs = vec![0.0; 2 * n];
        assert_eq!(hjb_problem_nodes(p, xs.as_mut_ptr(), xs.len()), HjbStatus::Ok);
        assert!(xs.chunks(2).all(|c| c[0] > 0.0 && c[0] < 1.0 && c[1] > 0.0 && c[1] < 2.0));
        hjb_problem_free(p);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let (s, p) = build("[domain]\nextents = [[0, 1]]\nn = [10]\n");
    assert_eq!(s, HjbStatus::Config);
    assert!(p.is_null());
    assert!(last_error().contains("[operator]"));

    let (s, _) = build("[operator\n");
    assert_eq!(s, HjbStatus::Config);
    assert!(last_error().contains("line 1"));

    let s = unsafe { hjb_problem_new(ptr::null(), &mut ptr::null_mut()) };
    assert_eq!(s, HjbStatus::NullPointer);

    let bad = [0xffu8, 0];
    let s = unsafe { hjb_problem_new(bad.as_ptr().cast(), &mut ptr::null_mut()) };
    assert_eq!(s, HjbStatus::InvalidUtf8);

    let (_, p) = build(FUCIK);
    unsafe {
        let mut buf = vec![0.0; 3];
        assert_eq!(hjb_problem_phi(p, buf.as_mut_ptr(), 3), HjbStatus::LengthMismatch);
        assert_eq!(hjb_problem_tstar(p, 0.0, buf.as_mut_ptr()), HjbStatus::Config);
        assert_eq!(hjb_problem_eigenvalues(p, ptr::null_mut(), buf.as_mut_ptr()), HjbStatus::NullPointer);
        assert_eq!(hjb_problem_eigenvalues(ptr::null(), buf.as_mut_ptr(), buf.as_mut_ptr()), HjbStatus::NullPointer);
        assert_eq!(hjb_problem_len(ptr::null()), 0);
        hjb_problem_free(p);
        hjb_problem_free(ptr::null_mut());
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(hjb_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    for (cc, lang) in [("cc", "c"), ("c++", "c++")] {
        let out = Command::new(cc)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I", include, "-"])
            .stdin(std::process::Stdio::piped())
            .spawn()
            .and_then(|mut c| {
                use std::io::Write;
                c.stdin.take().unwrap().write_all(b"#include <hjblab.h>\nint main(void){HjbProblem*p=0;return (int)hjb_problem_len(p);}\n")?;
                c.wait_with_output()
            });
        match out {
            Ok(o) => assert!(o.status.success(), "{cc} rejected header"),
            Err(e) => eprintln!("skipping {cc}: {e}"),
        }
    }
}
