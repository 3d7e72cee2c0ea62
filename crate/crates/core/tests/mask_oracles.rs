use proptest::prelude::*;
use regionmask_core::mask::{
    accumulate_heatmap, combined_mask, dynamic_mask, region_scores, schedule_frame,
    static_keep_count, static_mask, AnnotationSet, RegionScores,
};
use regionmask_core::{BBox, Error, FrameKind, GridSpec, MaskSchedule, RegionMask};

/// Region grid with frame sides up to 128 pixels.
fn grid_strategy() -> impl Strategy<Value = GridSpec> {
    (1usize..=16, 1usize..=8, 1usize..=8).prop_filter_map("frame ≤ 128", |(s, r, c)| {
        (r * s <= 128 && c * s <= 128).then(|| GridSpec::from_regions(r, c, s).unwrap())
    })
}

fn box_in(h: usize, w: usize) -> impl Strategy<Value = BBox> {
    (0..w, 0..h, 1..=w, 1..=h).prop_map(move |(a, b, dx, dy)| {
        let x2 = (a + dx).min(w);
        let y2 = (b + dy).min(h);
        BBox::new(a.min(x2 - 1), b.min(y2 - 1), x2, y2).unwrap()
    })
}

fn grid_and_frames(max_boxes: usize) -> impl Strategy<Value = (GridSpec, Vec<Vec<BBox>>)> {
    grid_strategy().prop_flat_map(move |g| {
        let b = box_in(g.frame_height, g.frame_width);
        (
            Just(g),
            proptest::collection::vec(proptest::collection::vec(b, 0..=max_boxes / 4), 0..=4),
        )
    })
}

fn brute_heatmap(grid: &GridSpec, frames: &[Vec<BBox>]) -> Vec<u32> {
    let mut out = vec![0; grid.frame_height * grid.frame_width];
    for y in 0..grid.frame_height {
        for x in 0..grid.frame_width {
            out[y * grid.frame_width + x] = frames
                .iter()
                .flatten()
                .filter(|b| b.x1 <= x && x < b.x2 && b.y1 <= y && y < b.y2)
                .count() as u32;
        }
    }
    out
}

/// Ranks by sorting the whole list, then takes the first `k`.
fn sort_oracle(values: &[f64], k: usize) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    let mut keep = vec![false; values.len()];
    for &i in &idx[..k] {
        keep[i] = true;
    }
    keep
}

/// A region is dynamic iff some box shares at least one pixel with it.
fn overlap_oracle(grid: &GridSpec, boxes: &[BBox], dilation: usize) -> Vec<bool> {
    let s = grid.region_size;
    let hit = |r: usize, c: usize| {
        boxes.iter().any(|b| {
            let (x1, y1, x2, y2) = (c * s, r * s, (c + 1) * s, (r + 1) * s);
            b.x1 < x2 && x1 < b.x2 && b.y1 < y2 && y1 < b.y2
        })
    };
    let (rows, cols) = (grid.rows(), grid.cols());
    let mut out = vec![false; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = (0..rows).any(|rr| {
                (0..cols).any(|cc| {
                    r.abs_diff(rr) <= dilation && c.abs_diff(cc) <= dilation && hit(rr, cc)
                })
            });
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn heatmap_matches_per_pixel_count((grid, frames) in grid_and_frames(200)) {
        let h = accumulate_heatmap(frames.iter().map(|f| f.as_slice()), &grid).unwrap();
        prop_assert_eq!(h.values().to_vec(), brute_heatmap(&grid, &frames));
    }

    #[test]
    fn region_scores_match_nested_sum((grid, frames) in grid_and_frames(40)) {
        let h = accumulate_heatmap(frames.iter().map(|f| f.as_slice()), &grid).unwrap();
        let scores = region_scores(&h, &grid).unwrap();
        let s = grid.region_size;
        for r in 0..grid.rows() {
            for c in 0..grid.cols() {
                let mut want = 0.0;
                for y in r * s..(r + 1) * s {
                    for x in c * s..(c + 1) * s {
                        want += h.get(y, x) as f64;
                    }
                }
                prop_assert_eq!(scores.get(r, c), want);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn static_mask_matches_sort_oracle(
        grid in grid_strategy(),
        raw in proptest::collection::vec(0u8..6, 64),
        k_s in 0.0f64..=1.0,
    ) {
        // few distinct values so ties are common
        let values: Vec<f64> = (0..grid.num_tokens()).map(|i| raw[i % raw.len()] as f64).collect();
        let scores = RegionScores::new(grid, values.clone()).unwrap();
        let mask = static_mask(&scores, k_s);
        let k = (k_s * grid.num_tokens() as f64).floor() as usize;
        prop_assert_eq!(mask.keep_count(), k);
        prop_assert_eq!(static_keep_count(k_s, grid.num_tokens()), k);
        prop_assert_eq!(mask.cells().to_vec(), sort_oracle(&values, k));
    }

    #[test]
    fn dynamic_mask_matches_overlap_oracle(
        (grid, frames) in grid_and_frames(24),
        dilation in 0usize..3,
    ) {
        let boxes: Vec<BBox> = frames.concat();
        let mask = dynamic_mask(&boxes, &grid, dilation);
        prop_assert_eq!(mask.cells().to_vec(), overlap_oracle(&grid, &boxes, dilation));
    }

    #[test]
    fn dynamic_mask_distributes_over_box_union(
        (grid, frames) in grid_and_frames(24),
        split in 0usize..8,
        dilation in 0usize..3,
    ) {
        let boxes: Vec<BBox> = frames.concat();
        let (a, b) = boxes.split_at(split.min(boxes.len()));
        let whole = dynamic_mask(&boxes, &grid, dilation);
        let parts = combined_mask(&dynamic_mask(a, &grid, dilation), &dynamic_mask(b, &grid, dilation)).unwrap();
        prop_assert_eq!(whole, parts);
    }

    #[test]
    fn combined_mask_is_a_lawful_union(
        grid in grid_strategy(),
        a in proptest::collection::vec(any::<bool>(), 64),
        b in proptest::collection::vec(any::<bool>(), 64),
    ) {
        let n = grid.num_tokens();
        let ma = RegionMask::from_cells(grid, (0..n).map(|i| a[i % 64]).collect()).unwrap();
        let mb = RegionMask::from_cells(grid, (0..n).map(|i| b[(i * 7) % 64]).collect()).unwrap();
        let u = combined_mask(&ma, &mb).unwrap();
        prop_assert!(u.is_superset_of(&ma) && u.is_superset_of(&mb));
        prop_assert_eq!(&u, &combined_mask(&mb, &ma).unwrap());
        prop_assert_eq!(&combined_mask(&ma, &ma).unwrap(), &ma);
        let count = (0..n).filter(|&i| ma.cells()[i] || mb.cells()[i]).count();
        prop_assert_eq!(u.keep_count(), count);
    }

    #[test]
    fn schedule_depends_only_on_t_and_period(
        t in 0usize..10_000,
        period in 1usize..64,
        k_s in 0.0f64..=1.0,
        dilation in 0usize..4,
    ) {
        let a = MaskSchedule::new(period, k_s, dilation).unwrap();
        let b = MaskSchedule::new(period, 0.5, 0).unwrap();
        prop_assert_eq!(schedule_frame(t, &a), schedule_frame(t, &b));
        prop_assert_eq!(schedule_frame(t, &a) == FrameKind::FullFrame, t % period == 0);
    }
}

#[test]
fn out_of_bounds_box_names_its_index() {
    let grid = GridSpec::from_regions(2, 2, 16).unwrap();
    let frames = [
        vec![BBox::new(0, 0, 4, 4).unwrap()],
        vec![
            BBox::new(1, 1, 2, 2).unwrap(),
            BBox::new(30, 0, 33, 5).unwrap(),
        ],
    ];
    let err = accumulate_heatmap(frames.iter().map(|f| f.as_slice()), &grid).unwrap_err();
    assert!(
        matches!(err, Error::BoxOutOfBounds { index: 2, .. }),
        "{err}"
    );
}

#[test]
fn static_mask_extremes() {
    let grid = GridSpec::from_regions(3, 5, 16).unwrap();
    let scores = RegionScores::new(grid, (0..15).map(|i| (i % 4) as f64).collect()).unwrap();
    assert_eq!(static_mask(&scores, 0.0).keep_count(), 0);
    assert_eq!(static_mask(&scores, 1.0), RegionMask::all(grid));
}

#[test]
fn mask_json_round_trip() {
    let grid = GridSpec::from_regions(3, 4, 16).unwrap();
    let mask = RegionMask::from_locations(grid, &[0, 5, 11]).unwrap();
    let back = RegionMask::from_json(&mask.to_json().unwrap()).unwrap();
    assert_eq!(back, mask);
}

#[test]
fn annotation_parse_error_mentions_line() {
    let text = "{\n  \"frame_size\": [32, 32],\n  \"frames\": [ {\"index\": 0, \"boxes\": [[0,0,4]] } ]\n}";
    let err = AnnotationSet::from_json(text).unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");
}
