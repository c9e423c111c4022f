import json
import shutil

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from anticipate.checkpoint import checkpoint_dict, load_checkpoint, model_from_dict, save_checkpoint
from anticipate.data import (Dataset, FeatureSequence, SyntheticSpec, generate_synthetic, load_dataset,
                             noisy_grammar, save_dataset, split_indices)
from anticipate.decoder import greedy_decode_batch
from anticipate.errors import (CheckpointVersionError, CorruptCheckpointError, DataFormatError, InvalidArgumentError,
                               ParseError, SchemaError, UnknownLabelError)
from anticipate.evaluation import count_predictions, f1_from_counts
from anticipate.models import (TrainingConfig, encode_batch, init_prediction, init_recognition, make_windows,
                               recognize, train_prediction)
from anticipate.vocabulary import ActionVocabulary

HEADER = {"format": "anticipate-dataset", "version": 1, "vocabulary": ["reach", "place"],
          "columns": ["x", "y"], "groups": {"pose": ["x", "y"]}, "sample_rate_hz": 120.0}


def _write(path, header, body):
    path.mkdir(parents=True, exist_ok=True)
    (path / "dataset.json").write_text(json.dumps(header))
    (path / "frames.csv").write_text(body)
    return path


MINIMAL = "sequence_id,frame_index,x,y,label,intention\ns1,0,0.5,1.5,reach,place\ns1,1,0.25,-1,place,place\n"


def _sample(seed=0):
    return generate_synthetic(SyntheticSpec(vocab_size=5, n_sequences=6, min_length=4, max_length=9,
                                            noise_columns=1, seed=seed))


class TestLoad:
    def test_minimal(self, tmp_path):
        ds = load_dataset(_write(tmp_path / "d", HEADER, MINIMAL))
        assert len(ds) == 1
        s = ds.sequences[0]
        np.testing.assert_array_equal(s.features, [[0.5, 1.5], [0.25, -1.0]])
        assert s.labels == ("reach", "place") and s.intention == "place"
        assert ds.groups == {"pose": (0, 1)} and ds.sample_rate_hz == 120.0

    def test_wrong_width(self, tmp_path):
        body = MINIMAL + "s2,0,1.0,place,reach\n"
        with pytest.raises(SchemaError) as err:
            load_dataset(_write(tmp_path / "d", HEADER, body))
        e = err.value
        assert (e.sequence_id, e.frame_index, e.line) == ("s2", 0, 4)
        assert "'s2'" in str(e) and "frame 0" in str(e)

    def test_unknown_label(self, tmp_path):
        body = MINIMAL.replace("place,place\n", "throw,place\n")
        with pytest.raises(UnknownLabelError) as err:
            load_dataset(_write(tmp_path / "d", HEADER, body))
        assert err.value.line == 3 and err.value.frame_index == 1

    @pytest.mark.parametrize("bad,kind", [
        ("s1,0,abc,1,reach,place\n", ParseError),
        ("s1,zero,1,1,reach,place\n", ParseError),
        ("s1,0,nan,1,reach,place\n", ParseError),
        ("s1,1,1,1,reach,place\n", SchemaError),
        ('s1,0,"1,1,reach,place\n', ParseError),
    ])
    def test_malformed_rows(self, tmp_path, bad, kind):
        body = "sequence_id,frame_index,x,y,label,intention\n" + bad
        with pytest.raises(kind) as err:
            load_dataset(_write(tmp_path / "d", HEADER, body))
        assert err.value.line == 2

    def test_non_contiguous_sequence(self, tmp_path):
        body = MINIMAL + "s2,0,1,1,,\ns1,2,1,1,,place\n"
        with pytest.raises(SchemaError, match="contiguous"):
            load_dataset(_write(tmp_path / "d", HEADER, body))

    @pytest.mark.parametrize("change", [{"version": 9}, {"format": "csv"}, {"columns": ["x", "x"]},
                                        {"vocabulary": ["reach"]}, {"sample_rate_hz": -1},
                                        {"groups": {"pose": ["z"]}}])
    def test_header_errors(self, tmp_path, change):
        with pytest.raises(SchemaError):
            load_dataset(_write(tmp_path / "d", {**HEADER, **change}, MINIMAL))

    def test_bad_body_header(self, tmp_path):
        with pytest.raises(SchemaError):
            load_dataset(_write(tmp_path / "d", HEADER, MINIMAL.replace("label", "action")))

    def test_unlabeled_sequences(self, tmp_path):
        body = "sequence_id,frame_index,x,y,label,intention\ns1,0,1,2,,\n"
        s = load_dataset(_write(tmp_path / "d", HEADER, body)).sequences[0]
        assert s.labels is None and s.intention is None


class TestRoundTrip:
    def test_cad120_style_bit_identical(self, tmp_path):
        spec = SyntheticSpec(vocab_size=11, n_sequences=12, min_length=20, max_length=30, early_columns=0,
                             late_columns=0, action_columns=6, sample_rate_hz=5.0, seed=4)
        ds = generate_synthetic(spec)
        save_dataset(ds, tmp_path / "a")
        again = load_dataset(tmp_path / "a")
        save_dataset(again, tmp_path / "b")
        for name in ("dataset.json", "frames.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        for s, t in zip(ds.sequences, again.sequences):
            assert s.features.tobytes() == t.features.tobytes()
            assert s.labels == t.labels and s.intention == t.intention
        assert again.groups == ds.groups and again.columns == ds.columns

    @settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(st.integers(0, 10_000))
    def test_generated_data_validates_after_roundtrip(self, tmp_path, seed):
        ds = _sample(seed)
        out = tmp_path / f"d{seed}"
        save_dataset(ds, out)
        again = load_dataset(out)
        again.validate()
        assert [s.id for s in again.sequences] == [s.id for s in ds.sequences]

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        save_dataset(_sample(), tmp_path / "d")
        assert sorted(p.name for p in (tmp_path / "d").iterdir()) == ["dataset.json", "frames.csv"]


def _mutate(text, data):
    lines = text.split("\n")
    op = data.draw(st.sampled_from(["delete_line", "duplicate_line", "edit_field", "insert_bytes", "truncate"]))
    i = data.draw(st.integers(0, len(lines) - 1))
    if op == "delete_line":
        del lines[i]
    elif op == "duplicate_line":
        lines.insert(i, lines[i])
    elif op == "edit_field":
        fields = lines[i].split(",")
        j = data.draw(st.integers(0, len(fields) - 1))
        fields[j] = data.draw(st.sampled_from(["", "x", "1e999", "-0", "7", "a0", "zz", '"', "1,2", "nan"]))
        lines[i] = ",".join(fields)
    elif op == "insert_bytes":
        junk = data.draw(st.text(min_size=1, max_size=4))
        pos = data.draw(st.integers(0, len(lines[i])))
        lines[i] = lines[i][:pos] + junk + lines[i][pos:]
    else:
        return text[:data.draw(st.integers(0, len(text)))]
    return "\n".join(lines)


class TestFuzz:
    @settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(st.data())
    def test_mutated_files_load_or_raise_typed(self, tmp_path, data):
        src = tmp_path / "src"
        if not src.exists():
            save_dataset(_sample(), src)
        target = tmp_path / "mut"
        shutil.rmtree(target, ignore_errors=True)
        shutil.copytree(src, target)
        name = data.draw(st.sampled_from(["frames.csv", "dataset.json"]))
        text = (src / name).read_text()
        (target / name).write_text(_mutate(text, data), encoding="utf-8")
        try:
            ds = load_dataset(target)
        except DataFormatError:
            return
        ds.validate()


class TestSynthetic:
    def test_constant_frames(self):
        spec = SyntheticSpec(vocab_size=3, transitions=np.eye(3), initial=np.array([0.0, 1.0, 0.0]), noise=0.0,
                             early_columns=0, late_columns=0, n_sequences=2, seed=1)
        for s in generate_synthetic(spec).sequences:
            assert np.all(s.features == s.features[0])
            assert set(s.labels) == {"a1"}

    def test_deterministic(self):
        a, b = _sample(3), _sample(3)
        for s, t in zip(a.sequences, b.sequences):
            assert s.features.tobytes() == t.features.tobytes() and s.labels == t.labels

    def test_bigram_frequencies(self):
        V = 4
        table = noisy_grammar(V, 0.6, np.random.default_rng(0))
        spec = SyntheticSpec(vocab_size=V, transitions=table, n_sequences=400, min_length=25, max_length=35, seed=2)
        ds = generate_synthetic(spec)
        counts = np.zeros((V, V))
        for s in ds.sequences:
            idx = ds.vocabulary.encode(s.labels)
            np.add.at(counts, (idx[:-1], idx[1:]), 1)
        assert counts.sum() >= 10_000
        n = counts.sum(axis=1, keepdims=True)
        se = np.sqrt(table * (1 - table) / n)
        assert np.all(np.abs(counts / n - table) <= 3 * se)

    def test_late_columns_silent_before_onset(self):
        spec = SyntheticSpec(vocab_size=3, noise=0.0, onset_fraction=0.5, n_sequences=5, seed=0)
        ds = generate_synthetic(spec)
        late = list(ds.groups["late"])
        for s in ds.sequences:
            onset = int(np.ceil(0.5 * len(s)))
            assert np.all(s.features[:onset, late] == 0.0)
            assert np.all(s.features[onset:, late] == s.features[-1, late])

    @pytest.mark.parametrize("bad", [dict(transitions=np.ones((3, 3))), dict(vocab_size=1),
                                     dict(min_length=5, max_length=3), dict(noise=-1.0),
                                     dict(emission_means=np.zeros((2, 2)))])
    def test_invalid_spec(self, bad):
        with pytest.raises(InvalidArgumentError):
            generate_synthetic(SyntheticSpec(**{"vocab_size": 3, **bad}))

    def test_spec_dict_roundtrip(self):
        spec = SyntheticSpec(vocab_size=3, transitions=np.eye(3), seed=9)
        again = SyntheticSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
        assert _dump(generate_synthetic(again)) == _dump(generate_synthetic(spec))


def _dump(ds):
    return [(s.id, s.features.tobytes(), s.labels) for s in ds.sequences]


class TestDatasetHelpers:
    def test_group_union_and_select(self):
        ds = _sample()
        g = ds.group("early", "noise")
        sub = ds.select_columns(g.columns)
        assert sub.columns == tuple(ds.columns[c] for c in g.columns)
        assert set(sub.groups) == {"early", "noise"}
        np.testing.assert_array_equal(sub.sequences[0].features, ds.sequences[0].features[:, list(g.columns)])

    def test_unknown_group(self):
        with pytest.raises(InvalidArgumentError):
            _sample().group("gaze")

    def test_split(self):
        train, held = split_indices(10, 0.25, np.random.default_rng(0))
        assert len(held) == 2 and sorted(np.r_[train, held]) == list(range(10))

    def test_duplicate_ids(self):
        s = FeatureSequence("a", np.zeros((1, 1)))
        with pytest.raises(SchemaError):
            Dataset([s, s], ActionVocabulary.numbered(2), ("x",))


class TestCheckpoint:
    def test_roundtrip_fresh_models(self, tmp_path):
        probe = np.random.default_rng(0).normal(size=(7, 3))
        rec = init_recognition(3, ActionVocabulary(["pick", "pass"]), TrainingConfig(seed=4))
        again = load_checkpoint(save_checkpoint(rec, tmp_path / "rec"))
        assert again.params.equal(rec.params) and again.intentions == rec.intentions
        np.testing.assert_array_equal(recognize(again, probe), recognize(rec, probe))
        pred = init_prediction(3, ActionVocabulary.numbered(5), TrainingConfig(seed=4, hidden_dim=7))
        again = load_checkpoint(save_checkpoint(pred, tmp_path / "pred"))
        assert again.params.equal(pred.params)
        assert again.config == pred.config and again.hidden_dim == 7 and again.embed_dim == 50

    def test_documented_flat_order(self):
        pred = init_prediction(3, ActionVocabulary.numbered(5), TrainingConfig())
        names = [p["name"] for p in checkpoint_dict(pred)["params"]]
        assert names == ["enc.embed.W", "enc.embed.b", "enc.lstm.W", "enc.lstm.b", "dec.embed",
                         "dec.lstm.W", "dec.lstm.b", "proj.W", "proj.b"]

    def test_truncated(self, tmp_path):
        path = save_checkpoint(init_prediction(3, ActionVocabulary.numbered(3), TrainingConfig()), tmp_path / "m")
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)

    def test_tampered_and_versioned(self):
        d = checkpoint_dict(init_prediction(3, ActionVocabulary.numbered(3), TrainingConfig()))
        with pytest.raises(CorruptCheckpointError, match="checksum"):
            model_from_dict({**d, "seed": 99})
        with pytest.raises(CheckpointVersionError):
            model_from_dict({**d, "version": 2})

    def test_trained_model_reproduces_heldout_f1(self, tmp_path):
        ds = _sample(1)
        train, held = ds.subset(range(4)), ds.subset(range(4, 6))
        model, _ = train_prediction(train, TrainingConfig(iterations=20, horizon=2, window=2, hidden_dim=6))
        again = load_checkpoint(save_checkpoint(model, tmp_path / "model"))
        w = make_windows(held, 2, 2)

        def f1(m):
            pred = greedy_decode_batch(m, encode_batch(m, w.observed), 2)
            return f1_from_counts(count_predictions(pred, w.future.T))

        assert f1(again) == f1(model)
