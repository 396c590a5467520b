"""Smoke tests for the python bindings: import, synthesize, train a tiny run,
check determinism and file round-trips."""

import os
import tempfile

import metaview


def approx_equal(a, b, tol=1e-12):
    return abs(a - b) <= tol


def main():
    cfg = metaview.default_config()
    assert cfg["ways"] == "5"
    assert cfg["lambda1"] == "10"

    small = {
        "num_categories": 10,
        "instances_per_category": 3,
        "train_labels": 4,
        "val_labels": 3,
        "test_labels": 3,
        "epochs": 1,
        "iterations": 3,
        "val_tasks": 4,
        "test_tasks": 6,
        "ways": 3,
        "seed": 7,
    }

    ds = metaview.generate_dataset(small)
    assert ds.num_objects == 30
    assert ds.num_categories == 10

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "data.mvgrid")
        ds.save(path)
        back = metaview.load_dataset(path)
        assert back.num_objects == ds.num_objects

        header = os.path.join(tmp, "header.mvgrid")
        ds.save(header, header_only=True)
        regen = metaview.load_dataset(header)
        assert regen.num_objects == ds.num_objects
        assert os.path.getsize(header) < os.path.getsize(path)

        run = metaview.train("metaview", small)
        assert len(run["history"]) == 1
        assert 0.0 <= run["test"]["accuracy_mean"] <= 1.0
        assert run["test"]["num_tasks"] == 6

        ckpt = os.path.join(tmp, "params.ckpt")
        run["params"].save(ckpt)
        params = metaview.load_checkpoint(ckpt)
        assert params.content_hash() == run["params"].content_hash()

        res1 = metaview.evaluate(params, small, num_tasks=5)
        res2 = metaview.evaluate(params, small, num_tasks=5)
        assert approx_equal(res1["accuracy_mean"], res2["accuracy_mean"])

        run2 = metaview.train("metaview", small)
        assert run2["params"].content_hash() == run["params"].content_hash()

        base = metaview.train("random-one", small)
        assert base["test"]["num_tasks"] == 6

    err = metaview.gradcheck(seed=0)
    assert err <= 1e-4, f"gradient check failed: {err}"

    try:
        metaview.generate_dataset({"lambda3": 1})
        raise AssertionError("expected MetaviewError for an unknown key")
    except metaview.MetaviewError:
        pass

    print("python smoke tests passed")


if __name__ == "__main__":
    main()
