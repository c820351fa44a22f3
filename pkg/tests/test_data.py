"""Pool generation and the MCLF/CSV feature formats."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcl.data import (
    BadMagicError,
    DimensionMismatchError,
    FeatureFileError,
    GenSpec,
    Pool,
    TruncatedFileError,
    generate_pool,
    load_pool,
    read_features,
    read_features_csv,
    write_features,
)


class TestGenSpec:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            GenSpec(1, 30, 64, 0.35, seed=0)
        with pytest.raises(ValueError):
            GenSpec(10, 1, 64, 0.35, seed=0)
        with pytest.raises(ValueError):
            GenSpec(10, 30, 0, 0.35, seed=0)
        with pytest.raises(ValueError):
            GenSpec(10, 30, 64, -0.1, seed=0)


class TestGenerator:
    def test_shapes_and_labels(self):
        pool = generate_pool(GenSpec(5, 7, 12, 0.2, seed=0))
        assert len(pool) == 35
        assert pool.features.shape == (35, 12)
        assert pool.features.dtype == np.float32
        assert np.array_equal(pool.identities, np.repeat(np.arange(5), 7))
        assert pool.num_identities == 5

    def test_deterministic_for_fixed_spec(self):
        spec = GenSpec(6, 5, 10, 0.3, seed=11)
        a, b = generate_pool(spec), generate_pool(spec)
        assert a == b

    def test_seed_changes_features(self):
        a = generate_pool(GenSpec(6, 5, 10, 0.3, seed=1))
        b = generate_pool(GenSpec(6, 5, 10, 0.3, seed=2))
        assert not np.array_equal(a.features, b.features)

    def test_zero_noise_collapses_to_unit_means(self):
        # with sigma = 0 every sample equals its identity's mean direction,
        # which must sit on the unit sphere
        pool = generate_pool(GenSpec(10, 4, 16, 0.0, seed=2))
        norms = np.linalg.norm(pool.features.astype(np.float64), axis=1)
        assert np.allclose(norms, 1.0, atol=1e-6)
        for ident in range(10):
            rows = pool.features[pool.identities == ident]
            assert np.array_equal(rows, np.tile(rows[0], (len(rows), 1)))

    def test_noise_moments(self):
        # residuals around the per-identity sample mean should look like
        # isotropic sigma-scale Gaussians (statistical, fixed seed)
        sigma, per_id = 0.25, 400
        pool = generate_pool(GenSpec(4, per_id, 32, sigma, seed=9))
        feats = pool.features.astype(np.float64)
        resid = []
        for ident in range(4):
            rows = feats[pool.identities == ident]
            resid.append(rows - rows.mean(axis=0))
        resid = np.concatenate(resid)
        assert abs(resid.std() - sigma) < 0.01
        assert abs(resid.mean()) < 0.01

    def test_means_spread_over_the_sphere(self):
        pool = generate_pool(GenSpec(50, 100, 24, 0.0, seed=4))
        means = np.stack([
            pool.features[pool.identities == i][0].astype(np.float64)
            for i in range(50)
        ])
        dots = means @ means.T
        np.fill_diagonal(dots, 0.0)
        # random unit directions in 24-d are near-orthogonal on average
        assert abs(dots.mean()) < 0.05


class TestPool:
    def test_validation(self):
        with pytest.raises(ValueError):
            Pool(np.zeros((3, 2, 1), dtype=np.float32), np.zeros(3))
        with pytest.raises(ValueError):
            Pool(np.full((2, 2), np.nan, dtype=np.float32), np.zeros(2))
        with pytest.raises(ValueError):
            Pool(np.zeros((3, 2), dtype=np.float32), np.zeros(2))
        with pytest.raises(ValueError):
            Pool(np.zeros((2, 2), dtype=np.float32), np.array([-1, 0]))
        with pytest.raises(ValueError):
            Pool(np.zeros((2, 2), dtype=np.float32), np.zeros(2),
                 sample_ids=np.array([3, 3]))

    def test_subset_preserves_sample_ids(self, small_pool):
        sub = small_pool.subset(np.array([5, 1, 10]))
        assert np.array_equal(sub.sample_ids, [5, 1, 10])
        assert np.array_equal(sub.features, small_pool.features[[5, 1, 10]])

    def test_sample_accessor(self, small_pool):
        s = small_pool.sample(7)
        assert s.sample_id == 7
        assert s.identity == int(small_pool.identities[7])


class TestMCLFRoundTrip:
    @given(
        n=st.integers(1, 40),
        d=st.integers(1, 12),
        labels=st.booleans(),
        seed=st.integers(0, 2**31 - 1),
    )
    @settings(max_examples=60, deadline=None)
    def test_round_trip_bitwise(self, tmp_path_factory, n, d, labels, seed):
        rng = np.random.default_rng(seed)
        pool = Pool(rng.standard_normal((n, d)).astype(np.float32),
                    rng.integers(0, 5, size=n))
        path = tmp_path_factory.mktemp("mclf") / "pool.mclf"
        write_features(pool, path, include_labels=labels)
        back = read_features(path)
        assert back.features.tobytes() == pool.features.tobytes()
        if labels:
            assert np.array_equal(back.identities, pool.identities)
        else:
            assert np.array_equal(back.identities, np.zeros(n, dtype=np.int64))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.mclf"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(BadMagicError):
            read_features(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "x.mclf"
        path.write_bytes(b"MCLF\x01")
        with pytest.raises(TruncatedFileError):
            read_features(path)

    def test_truncated_payload(self, tmp_path, small_pool):
        path = tmp_path / "x.mclf"
        write_features(small_pool, path)
        data = path.read_bytes()
        path.write_bytes(data[:-10])
        with pytest.raises(TruncatedFileError):
            read_features(path)

    def test_trailing_garbage(self, tmp_path, small_pool):
        path = tmp_path / "x.mclf"
        write_features(small_pool, path)
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(FeatureFileError):
            read_features(path)

    def test_unsupported_version(self, tmp_path, small_pool):
        path = tmp_path / "x.mclf"
        write_features(small_pool, path)
        data = bytearray(path.read_bytes())
        data[4] = 9
        path.write_bytes(bytes(data))
        with pytest.raises(FeatureFileError):
            read_features(path)

    def test_dimension_check(self, tmp_path, small_pool):
        path = tmp_path / "x.mclf"
        write_features(small_pool, path)
        with pytest.raises(DimensionMismatchError):
            read_features(path, expect_d=small_pool.d_raw + 1)


class TestCSV:
    def _write(self, path, text):
        path.write_text(text)
        return path

    def test_reads_rows(self, tmp_path):
        path = self._write(tmp_path / "f.csv", "d=3\n1,2,3\n4,5,6\n")
        pool = read_features_csv(path)
        assert pool.features.shape == (2, 3)
        assert pool.features[1, 2] == pytest.approx(6.0)

    def test_blank_lines_skipped(self, tmp_path):
        path = self._write(tmp_path / "f.csv", "d=2\n1,2\n\n3,4\n")
        assert len(read_features_csv(path)) == 2

    def test_header_required(self, tmp_path):
        path = self._write(tmp_path / "f.csv", "3\n1,2,3\n")
        with pytest.raises(BadMagicError):
            read_features_csv(path)

    def test_ragged_row_rejected(self, tmp_path):
        path = self._write(tmp_path / "f.csv", "d=3\n1,2,3\n4,5\n")
        with pytest.raises(DimensionMismatchError):
            read_features_csv(path)


class TestLoadPool:
    def test_sniffs_both_formats(self, tmp_path, small_pool):
        binary = tmp_path / "p.mclf"
        write_features(small_pool, binary)
        assert load_pool(binary) == small_pool
        csv_path = tmp_path / "p.csv"
        csv_path.write_text("d=2\n0.5,0.5\n0.1,0.9\n")
        assert len(load_pool(csv_path)) == 2

    def test_unknown_format(self, tmp_path):
        path = tmp_path / "p.bin"
        path.write_bytes(b"\x00\x01\x02\x03")
        with pytest.raises(BadMagicError):
            load_pool(path)
