use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nightguide::dataset::{write_dpt, write_label_png, write_manifest, write_mask_png, write_spm, GpsPosition, ManifestRecord, RecordPaths, Role};
use nightguide::types::{CameraModel, ClassCatalog, DepthMap, HardLabelMap, InvalidMask, RawSoftMap};

const H: usize = 8;
const W: usize = 10;
const C: usize = 19;

fn nightguide(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nightguide"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn soft(label_of: impl Fn(usize) -> usize, peak: f32) -> RawSoftMap {
    let rest = (1.0 - peak) / (C - 1) as f32;
    let mut data = Vec::with_capacity(H * W * C);
    for i in 0..H * W {
        data.extend((0..C).map(|k| if k == label_of(i) { peak } else { rest }));
    }
    RawSoftMap { height: H, width: W, channels: C, data }
}

fn labels(i: usize) -> usize {
    if i % W < 5 { 0 } else { 13 }
}

/// Two dark records, three day records and ground truth for the dark ones.
struct Dataset {
    dir: tempfile::TempDir,
}

impl Dataset {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let cat = ClassCatalog::cityscapes();
        let camera = CameraModel::new(50.0, 50.0, W as f64 / 2.0, H as f64 / 2.0).unwrap();
        let mut dark = Vec::new();
        let mut day = Vec::new();
        let mut gt = Vec::new();
        for (k, (id, role, lat)) in [
            ("n1", Role::Night, 47.0),
            ("n2", Role::Twilight, 47.01),
            ("d1", Role::Day, 47.0001),
            ("d2", Role::Day, 47.0101),
            ("d3", Role::Day, 46.0),
        ]
        .into_iter()
        .enumerate()
        {
            image::RgbImage::from_fn(W as u32, H as u32, |x, _| image::Rgb(if x < 5 { [40, 40, 40] } else { [200, 20, 20] }))
                .save(root.join(format!("{id}.png")))
                .unwrap();
            let peak = if role == Role::Day { 0.9 } else { 0.4 + 0.1 * k as f32 };
            write_spm(&root.join(format!("{id}.spm")), &soft(labels, peak)).unwrap();
            write_dpt(&root.join(format!("{id}.dpt")), &DepthMap::constant(H, W, 10.0).unwrap()).unwrap();
            let record = ManifestRecord {
                id: id.into(),
                role,
                gps: GpsPosition { lat, lon: 8.0 },
                paths: RecordPaths {
                    image: format!("{id}.png").into(),
                    soft_map: Some(format!("{id}.spm").into()),
                    depth: Some(format!("{id}.dpt").into()),
                    ..Default::default()
                },
                camera: Some(camera),
            };
            if role == Role::Day {
                day.push(record);
            } else {
                let truth: Vec<u8> = (0..H * W).map(|i| labels(i) as u8).collect();
                write_label_png(&root.join(format!("{id}_gt.png")), &HardLabelMap::new(H, W, truth, &cat).unwrap()).unwrap();
                let mask: Vec<bool> = (0..H * W).map(|i| i % 7 == 0).collect();
                write_mask_png(&root.join(format!("{id}_mask.png")), &InvalidMask::new(H, W, mask).unwrap()).unwrap();
                gt.push(ManifestRecord {
                    paths: RecordPaths {
                        gt_label: Some(format!("{id}_gt.png").into()),
                        invalid_mask: Some(format!("{id}_mask.png").into()),
                        ..record.paths.clone()
                    },
                    ..record.clone()
                });
                dark.push(record);
            }
        }
        write_manifest(&root.join("dark.jsonl"), &dark).unwrap();
        write_manifest(&root.join("day.jsonl"), &day).unwrap();
        write_manifest(&root.join("gt.jsonl"), &gt).unwrap();
        std::fs::write(root.join("empty.jsonl"), "").unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stdout: {}\nstderr: {}", stdout(o), String::from_utf8_lossy(&o.stderr));
}

#[test]
fn match_writes_nearest_day_ids() {
    let ds = Dataset::new();
    let out = ds.path("corr.csv");
    let o = nightguide(&["match", &ds.path("dark.jsonl"), &ds.path("day.jsonl"), "-o", &out]);
    assert_ok(&o);
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["dark_id", "day_id", "distance_m"]);
    assert_eq!((rows[1][0], rows[1][1]), ("n1", "d1"));
    assert_eq!((rows[2][0], rows[2][1]), ("n2", "d2"));
    assert!((rows[1][2].parse::<f64>().unwrap() - 11.119).abs() < 0.01);
}

#[test]
fn empty_reference_manifest_fails() {
    let ds = Dataset::new();
    let o = nightguide(&["match", &ds.path("dark.jsonl"), &ds.path("empty.jsonl"), "-o", &ds.path("c.csv")]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    assert!(!Path::new(&ds.path("c.csv")).exists());
}

#[test]
fn malformed_manifest_fails() {
    let ds = Dataset::new();
    std::fs::write(ds.path("bad.jsonl"), "{\"id\": 3}\n").unwrap();
    let o = nightguide(&["match", &ds.path("bad.jsonl"), &ds.path("day.jsonl")]);
    assert!(!o.status.success());
}

fn refine(ds: &Dataset, corr: &str, extra: &[&str]) -> (Output, PathBuf) {
    let out = ds.dir.path().join("refined");
    let (dark, day) = (ds.path("dark.jsonl"), ds.path("day.jsonl"));
    let mut args = vec!["--workers", "1", "refine", corr, &dark, &day, "-o", out.to_str().unwrap(), "--sigma-s", "4"];
    args.extend_from_slice(extra);
    (nightguide(&args), out)
}

#[test]
fn refine_writes_maps_and_report() {
    let ds = Dataset::new();
    let corr = ds.path("corr.csv");
    assert_ok(&nightguide(&["match", &ds.path("dark.jsonl"), &ds.path("day.jsonl"), "-o", &corr]));
    let (o, out) = refine(&ds, &corr, &["--mode", "bilateral"]);
    assert_ok(&o);
    for id in ["n1", "n2"] {
        let raw = nightguide::dataset::read_spm(&out.join(format!("{id}.spm"))).unwrap();
        assert_eq!((raw.height, raw.width, raw.channels), (H, W, C));
        let lab = nightguide::dataset::read_label_png(&out.join(format!("{id}_labels.png")), &ClassCatalog::cityscapes()).unwrap();
        let expect: Vec<u8> = (0..H * W).map(|i| labels(i) as u8).collect();
        assert_eq!(lab.labels(), &expect[..]);
    }
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "dark_id,day_id,mode,inlier_count,status");
    assert_eq!(lines[1], "n1,d1,bilateral,,ok");
    assert_eq!(lines[2], "n2,d2,bilateral,,ok");
}

#[test]
fn refine_reports_unknown_ids() {
    let ds = Dataset::new();
    let corr = ds.path("corr.csv");
    std::fs::write(&corr, "dark_id,day_id,distance_m\nn1,d1,1.0\nn2,zz,2.0\n").unwrap();
    let (o, out) = refine(&ds, &corr, &["--mode", "bilateral"]);
    assert!(!o.status.success());
    assert!(out.join("n1.spm").exists());
    assert!(!out.join("n2.spm").exists());
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.lines().nth(2).unwrap().starts_with("n2,zz,,,"), "{report}");
}

#[test]
fn refine_rejects_bad_parameters() {
    let ds = Dataset::new();
    let corr = ds.path("corr.csv");
    assert_ok(&nightguide(&["match", &ds.path("dark.jsonl"), &ds.path("day.jsonl"), "-o", &corr]));
    for extra in [&["--mode", "sideways"][..], &["--alpha-low", "0.9"], &["--min-inliers", "3"]] {
        let (o, _) = refine(&ds, &corr, extra);
        assert!(!o.status.success(), "{extra:?}");
    }
}

#[test]
fn evaluate_prints_table() {
    let ds = Dataset::new();
    let csv_out = ds.path("eval.csv");
    let o = nightguide(&["evaluate", &ds.path("dark.jsonl"), &ds.path("gt.jsonl"), "-o", &csv_out]);
    assert_ok(&o);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "class,uiou,tp,fp,fn,ti,fi");
    assert_eq!(lines.len(), C + 2);
    // At 1/C every prediction is kept and matches the ground truth.
    assert!(lines[1].starts_with("road,1"), "{}", lines[1]);
    assert_eq!(std::fs::read_to_string(&csv_out).unwrap(), text);

    // n1 has confidence 0.4 and n2 0.5; 0.45 invalidates all of n1.
    let o = nightguide(&["evaluate", &ds.path("dark.jsonl"), &ds.path("gt.jsonl"), "--theta", "0.45"]);
    assert_ok(&o);
    let road = stdout(&o).lines().nth(1).unwrap().to_string();
    let fields: Vec<u64> = road.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    let n_road = (H * W / 2) as u64;
    let invalid_n1 = (0..H * W).filter(|i| i % W < 5 && i % 7 == 0).count() as u64;
    assert_eq!(fields, [n_road, 0, 0, invalid_n1, n_road - invalid_n1]);

    let o = nightguide(&["evaluate", &ds.path("dark.jsonl"), &ds.path("gt.jsonl"), "--theta", "0.01"]);
    assert!(!o.status.success());
}

#[test]
fn curve_writes_grid() {
    let ds = Dataset::new();
    let out = ds.path("curve.csv");
    let o = nightguide(&["curve", &ds.path("dark.jsonl"), &ds.path("gt.jsonl"), "--grid-size", "5", "-o", &out]);
    assert_ok(&o);
    assert!(stdout(&o).contains("best theta"));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.starts_with("theta,mean_uiou,road,"));
    let o = nightguide(&["curve", &ds.path("dark.jsonl"), &ds.path("gt.jsonl"), "--grid-size", "1", "-o", &out]);
    assert!(!o.status.success());
}

#[test]
fn missing_ground_truth_is_counted_as_failure() {
    let ds = Dataset::new();
    let gt = nightguide::dataset::parse_manifest(Path::new(&ds.path("gt.jsonl"))).unwrap();
    write_manifest(Path::new(&ds.path("gt1.jsonl")), &gt[..1]).unwrap();
    let o = nightguide(&["evaluate", &ds.path("dark.jsonl"), &ds.path("gt1.jsonl")]);
    assert!(!o.status.success());
    // The remaining item is still scored.
    assert!(stdout(&o).starts_with("class,uiou"));
}

#[test]
fn warp_with_too_few_external_matches_falls_back() {
    let ds = Dataset::new();
    let corr = ds.path("corr.csv");
    assert_ok(&nightguide(&["match", &ds.path("dark.jsonl"), &ds.path("day.jsonl"), "-o", &corr]));
    let matches = ds.dir.path().join("matches");
    std::fs::create_dir(&matches).unwrap();
    std::fs::write(matches.join("n1.txt"), "1 1 2 1\n3 4 4 4\n").unwrap();
    let (o, out) = refine(&ds, &corr, &["--matches-dir", matches.to_str().unwrap()]);
    assert_ok(&o);
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.lines().nth(1).unwrap().starts_with("n1,d1,bilateral,"), "{report}");

    let (o, _) = refine(&ds, &corr, &["--matches-dir", matches.to_str().unwrap(), "--mode", "warp"]);
    assert!(!o.status.success());
}
