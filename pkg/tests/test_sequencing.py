import numpy as np
import pytest

from emofuse.errors import AlignmentError, DomainError, ParseError
from emofuse.sequencing import (
    AnnotationTrack,
    FrameFeatures,
    align_modalities,
    cut_windows,
    parse_annotations,
    remap_label,
    window_starts,
)


def make_frames(n, audio_dim=4, video_dim=6, labels=None):
    labels = labels if labels is not None else [i % 7 for i in range(n)]
    return [
        FrameFeatures(
            audio=np.full(audio_dim, i, dtype=np.float32),
            video=np.full(video_dim, 10 * i, dtype=np.float32),
            label=labels[i],
            frame_index=i,
        )
        for i in range(n)
    ]


class TestRemapLabel:
    def test_unannotated_goes_to_seven(self):
        assert remap_label(-1) == 7

    @pytest.mark.parametrize("raw", range(0, 7))
    def test_identity_on_expressions(self, raw):
        assert remap_label(raw) == raw

    def test_out_of_range(self):
        for raw in (-2, 7, 100):
            with pytest.raises(DomainError):
                remap_label(raw)

    def test_bijection_onto_dense_classes(self):
        image = sorted(remap_label(r) for r in range(-1, 7))
        assert image == list(range(8))


class TestParseAnnotations:
    def test_plain_labels(self, tmp_path):
        p = tmp_path / "vid1.txt"
        p.write_text("0\n3\n-1\n6\n")
        track = parse_annotations(p)
        assert track.labels == [0, 3, -1, 6]
        assert track.video_id == "vid1"

    def test_header_line_skipped(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("Neutral,Anger,Disgust\n0\n1\n")
        assert parse_annotations(p).labels == [0, 1]

    def test_non_numeric_later_line_fails(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("0\nwhat\n")
        with pytest.raises(ParseError):
            parse_annotations(p)

    def test_out_of_range_label(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("0\n9\n")
        with pytest.raises(DomainError):
            parse_annotations(p)


class TestAlignModalities:
    def test_equal_counts(self):
        track = AnnotationTrack(labels=[0] * 100, video_id="v")
        frames = align_modalities(track, [np.zeros(3)] * 100, [np.zeros(5)] * 100)
        assert len(frames) == 100

    def test_mismatch_reports_all_counts(self):
        track = AnnotationTrack(labels=[0] * 100, video_id="v")
        with pytest.raises(AlignmentError, match="annotations=100.*audio=99.*video=100"):
            align_modalities(track, [np.zeros(3)] * 99, [np.zeros(5)] * 100)

    def test_labels_remapped_per_frame(self):
        track = AnnotationTrack(labels=[-1, 0, 5], video_id="v")
        frames = align_modalities(track, [np.zeros(2)] * 3, [np.zeros(2)] * 3)
        assert [f.label for f in frames] == [7, 0, 5]
        assert [f.frame_index for f in frames] == [0, 1, 2]


class TestWindowStarts:
    def test_exact_fit(self):
        assert window_starts(15) == [0]

    def test_stride_grid_covers(self):
        assert window_starts(25) == [0, 10]

    def test_tail_window_added(self):
        assert window_starts(27) == [0, 10, 12]

    def test_short_video_single_start(self):
        assert window_starts(7) == [0]

    def test_zero_frames_rejected(self):
        with pytest.raises(DomainError):
            window_starts(0)

    def test_coverage_and_count_formula_sweep(self):
        for n in range(1, 5001):
            starts = window_starts(n)
            covered = np.zeros(n, dtype=bool)
            for s in starts:
                covered[s : s + 15] = True
            assert covered.all(), n
            if n >= 15:
                expected = (n - 15) // 10 + 1 + (1 if (n - 15) % 10 else 0)
                assert len(starts) == expected, n
                assert all(s + 15 <= n for s in starts)
            else:
                assert starts == [0]


class TestCutWindows:
    def test_verbatim_single_window(self):
        frames = make_frames(15)
        (w,) = cut_windows(frames)
        assert w.start_frame == 0 and w.pad_count == 0
        np.testing.assert_array_equal(w.audio_seq, np.stack([f.audio for f in frames]))
        np.testing.assert_array_equal(w.labels, [f.label for f in frames])

    def test_overlap_rows_shared(self):
        frames = make_frames(25)
        w0, w1 = cut_windows(frames)
        # windows share frames 10..14: last 5 rows of w0, first 5 of w1
        np.testing.assert_array_equal(w0.audio_seq[10:], w1.audio_seq[:5])
        np.testing.assert_array_equal(w0.video_seq[10:], w1.video_seq[:5])
        np.testing.assert_array_equal(w0.labels[10:], w1.labels[:5])

    def test_replicate_padding(self):
        frames = make_frames(7)
        (w,) = cut_windows(frames)
        assert w.pad_count == 8
        for row in range(7, 15):
            np.testing.assert_array_equal(w.audio_seq[row], frames[6].audio)
            np.testing.assert_array_equal(w.video_seq[row], frames[6].video)
            assert w.labels[row] == frames[6].label

    def test_tail_window_start(self):
        frames = make_frames(27)
        windows = cut_windows(frames)
        assert [w.start_frame for w in windows] == [0, 10, 12]
        assert all(w.pad_count == 0 for w in windows)

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            cut_windows([])
