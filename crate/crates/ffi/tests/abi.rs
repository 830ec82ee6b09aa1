use std::ffi::{CStr, CString};
use std::ptr;

use degma_ffi::*;

fn last_error() -> String {
    let p = degma_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn radial_handle_round_trip() {
    let mut h = ptr::null_mut();
    let st = unsafe { degma_radial_solve(1.0, 1.0, 1.0, 2.0, &mut h) };
    assert_eq!(st, DegmaStatus::Ok);
    let mut s = DegmaRadialSummary::default();
    assert_eq!(unsafe { degma_radial_summary(h, &mut s) }, DegmaStatus::Ok);
    assert!((s.leading - 1.0 / 18.0).abs() < 1e-9, "{}", s.leading);
    assert!((s.gprime / s.gprime_closed_form - 1.0).abs() < 1e-6);
    let (mut f, mut fp) = (0.0, 0.0);
    assert_eq!(unsafe { degma_radial_eval(h, 0.5, &mut f, &mut fp) }, DegmaStatus::Ok);
    assert_eq!((f, fp), (0.0, 0.0));
    assert_eq!(unsafe { degma_radial_eval(h, -1.0, &mut f, &mut fp) }, DegmaStatus::InvalidArgument);
    assert!(last_error().contains("negative"));
    unsafe { degma_radial_free(h) };
    unsafe { degma_radial_free(ptr::null_mut()) };
}

#[test]
fn invalid_parameters_map_to_status_codes() {
    let mut h = ptr::null_mut();
    let st = unsafe { degma_radial_solve(2.5, 1.0, 1.0, 2.0, &mut h) };
    assert_eq!(st, DegmaStatus::InvalidArgument);
    assert!(h.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { degma_radial_solve(1.0, 1.0, 1.0, 2.0, ptr::null_mut()) },
        DegmaStatus::NullPointer
    );
}

#[test]
fn config_errors_carry_the_field() {
    let bad = CString::new("schema = \"degma.run/1\"\np = 7.0\n").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { degma_solve(bad.as_ptr(), &mut h) }, DegmaStatus::Config);
    assert!(last_error().contains("`p`"));
    assert_eq!(unsafe { degma_solve(ptr::null(), &mut h) }, DegmaStatus::NullPointer);
}

#[test]
fn solution_buffers_respect_capacity() {
    let cfg = CString::new("schema = \"degma.run/1\"\n[solver]\nn = 65\n").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { degma_solve(cfg.as_ptr(), &mut h) }, DegmaStatus::Ok, "{}", {
        if h.is_null() {
            last_error()
        } else {
            String::new()
        }
    });
    let n = unsafe { degma_solution_n(h) };
    assert_eq!(n, 65);
    assert_eq!(unsafe { degma_solution_converged(h) }, 1);

    let mut needed = 0usize;
    let mut small = vec![0.0; 10];
    let st = unsafe { degma_solution_density(h, small.as_mut_ptr(), small.len(), &mut needed) };
    assert_eq!(st, DegmaStatus::BufferTooSmall);
    assert_eq!(needed, n * n);

    let mut f = vec![0.0; needed];
    let mut g = vec![0.0; needed];
    assert_eq!(unsafe { degma_solution_density(h, f.as_mut_ptr(), f.len(), ptr::null_mut()) }, DegmaStatus::Ok);
    assert_eq!(unsafe { degma_solution_pressure(h, g.as_mut_ptr(), g.len(), ptr::null_mut()) }, DegmaStatus::Ok);
    assert!(f.iter().all(|v| *v >= 0.0));
    assert!(f.iter().any(|v| *v == 0.0));

    let mut len = 0usize;
    let _ = unsafe { degma_solution_interface(h, ptr::null_mut(), 0, &mut len) };
    assert!(len >= 8 && len % 2 == 0);
    let mut xy = vec![0.0; len];
    assert_eq!(unsafe { degma_solution_interface(h, xy.as_mut_ptr(), len, ptr::null_mut()) }, DegmaStatus::Ok);
    let mean_r = xy.chunks(2).map(|c| c[0].hypot(c[1])).sum::<f64>() / (len / 2) as f64;
    assert!((mean_r - 1.0).abs() < 0.1, "{mean_r}");
    unsafe { degma_solution_free(h) };
}

#[test]
fn run_reports_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let cfg = CString::new("schema = \"degma.run/1\"\n").unwrap();
    let cmd = CString::new("radial").unwrap();
    let mut code = -1;
    assert_eq!(unsafe { degma_run(cmd.as_ptr(), cfg.as_ptr(), out.as_ptr(), &mut code) }, DegmaStatus::Ok);
    assert_eq!(code, 0);
    assert!(dir.path().join("manifest.json").exists());

    let cmd = CString::new("plot").unwrap();
    assert_eq!(
        unsafe { degma_run(cmd.as_ptr(), cfg.as_ptr(), out.as_ptr(), &mut code) },
        DegmaStatus::InvalidArgument
    );
    assert_eq!(code, 1);
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(degma_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export_and_compiles() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/degma.h")).unwrap();
    for name in [
        "degma_last_error",
        "degma_version",
        "degma_radial_solve",
        "degma_radial_eval",
        "degma_radial_summary",
        "degma_radial_free",
        "degma_solve",
        "degma_solution_n",
        "degma_solution_converged",
        "degma_solution_density",
        "degma_solution_pressure",
        "degma_solution_interface",
        "degma_solution_free",
        "degma_run",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    // Syntax check with the system C compiler when one is present.
    if let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-std=c99", "-x", "c"])
        .arg(dir.join("include/degma.h"))
        .status()
    {
        assert!(status.success());
    }
}
