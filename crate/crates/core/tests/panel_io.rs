use std::fs::File;
use std::io::{BufReader, BufWriter};

use panelq::covariance::{hall_sheather_bandwidth, sandwich_iid, DEFAULT_HS_ALPHA};
use panelq::dist::ErrorDist;
use panelq::md::{estimate_md, EstimatorConfig};
use panelq::panel::{load_panel, read_estimates, write_estimate, write_panel, PanelFormat};
use panelq::qr::fit_qr_triple;
use panelq::simulation::{generate_panel, replication_rng, DgpSpec};
use panelq::Error;

fn load(text: &str) -> panelq::error::Result<panelq::panel::PanelDataset> {
    load_panel(text.as_bytes(), PanelFormat::CsvLong)
}

#[test]
fn small_panel_is_ordered_by_time() {
    let panel =
        load("id,time,y,x\nb,2,6,3\na,1,1,0.5\nb,1,4,2\na,3,3,1.5\na,2,2,1\nb,3,8,4\n").unwrap();
    assert_eq!((panel.n(), panel.t(), panel.p()), (2, 3, 1));
    assert_eq!(panel.ids(), ["b", "a"]);
    assert_eq!(panel.response(0), [4.0, 6.0, 8.0]);
    assert_eq!(panel.regressors(1), [0.5, 1.0, 1.5]);
    assert_eq!(panel.regressor_names(), ["x"]);
}

#[test]
fn unbalanced_panel_names_the_short_individual() {
    let err = load("id,time,y,x\nA,1,1,1\nA,2,2,2\nB,1,1,1\n").unwrap_err();
    assert!(matches!(err, Error::Unbalanced(_)));
    assert_eq!(err.exit_code(), 3);
    let msg = err.to_string();
    assert!(msg.contains("B (1 of 2 periods)"), "{msg}");
    assert!(!msg.contains("A ("), "{msg}");

    let gap = load("id,time,y,x\nA,1,1,1\nA,3,2,2\n").unwrap_err();
    assert!(gap.to_string().contains("individual A"), "{gap}");
}

#[test]
fn malformed_rows_are_reported() {
    let dup = load("id,time,y,x\nA,1,1,1\nA,1,2,2\n").unwrap_err();
    assert!(dup.to_string().contains("rows 2 and 3"), "{dup}");

    let text = load("id,time,y,x\nA,1,1,1\nA,2,oops,2\n").unwrap_err();
    assert!(text.to_string().contains("row 3"), "{text}");
    assert!(text.to_string().contains("`y`"), "{text}");

    let no_x = load("id,time,y\nA,1,1\n").unwrap_err();
    assert!(no_x.to_string().contains("at least one x"), "{no_x}");

    assert!(load("id,time,y,x\nA,1,inf,1\n").is_err());
    assert!(load("id,time,y,x\nA,1.5,1,1\n").is_err());
    assert!(load("id,t,y,x\nA,1,1,1\n").is_err());
    assert!(load("id,time,y,x\n").is_err());
    for err in [dup, text, no_x] {
        assert_eq!(err.exit_code(), 3);
    }
}

#[test]
fn million_row_round_trip() {
    let spec = DgpSpec::new(1000, 1000, 0.5, ErrorDist::T3);
    let panel = generate_panel(&spec, &mut replication_rng(1, 0, 0))
        .unwrap()
        .panel;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    write_panel(&panel, BufWriter::new(File::create(&path).unwrap())).unwrap();
    let back = load_panel(
        BufReader::new(File::open(&path).unwrap()),
        PanelFormat::CsvLong,
    )
    .unwrap();
    assert_eq!(back.y(), panel.y());
    assert_eq!(back.x(), panel.x());
    assert_eq!(back.ids(), panel.ids());
}

#[test]
fn estimate_records_round_trip() {
    let spec = DgpSpec::new(6, 40, 1.0, ErrorDist::Chi2_3);
    let panel = generate_panel(&spec, &mut replication_rng(2, 0, 0))
        .unwrap()
        .panel;
    let tau = 0.75;
    let est = estimate_md(&panel, tau, &EstimatorConfig::default()).unwrap();
    let mut buf = Vec::new();
    let written = write_estimate(&est, &mut buf).unwrap();
    write_estimate(&est, &mut buf).unwrap();
    let back = read_estimates(buf.as_slice()).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[0], written);
    assert_eq!(back[0].beta_md, est.beta_md.as_slice());
    assert_eq!(back[0].sigma_matrix(), est.sigma_hat);
    assert_eq!(back[0].std_errors, est.std_errors);
    assert_eq!(back[0].m_t, 0);

    let d_t = hall_sheather_bandwidth(tau, 40, DEFAULT_HS_ALPHA)
        .unwrap()
        .d_t;
    assert_eq!(back[0].d_t, d_t);
    for (i, ind) in back[0].individuals.iter().enumerate() {
        let design = panel.design(i).unwrap();
        let fits = fit_qr_triple(&design, panel.response(i), tau, d_t).unwrap();
        let cov = sandwich_iid(&design, panel.response(i), &fits, tau, d_t).unwrap();
        assert_eq!(ind.n_truncated_densities, cov.n_truncated_densities);
        assert_eq!(ind.gamma, fits[1].gamma.as_slice());
        assert_eq!(ind.id, panel.ids()[i]);
    }
}

#[test]
fn records_with_other_versions_are_rejected() {
    let spec = DgpSpec::new(3, 20, 0.0, ErrorDist::Normal);
    let panel = generate_panel(&spec, &mut replication_rng(3, 0, 0))
        .unwrap()
        .panel;
    let est = estimate_md(&panel, 0.5, &EstimatorConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_estimate(&est, &mut buf).unwrap();
    let text = String::from_utf8(buf)
        .unwrap()
        .replace("\"version\":1", "\"version\":99");
    let err = read_estimates(text.as_bytes()).unwrap_err();
    assert!(matches!(err, Error::Version { .. }));
    assert_eq!(err.exit_code(), 7);
}
