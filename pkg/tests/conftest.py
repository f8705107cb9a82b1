import pytest
import torch

from app import create_app
from app.domain.dataset import prompt_template, sentence_classes
from app.domain.settings import DatasetSpec, HyperParameters
from app.domain.translator import Vocabulary


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow experiment tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training experiment")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="function")
def flask_app(tmp_path):
    test_config = {
        "TESTING": True,
        "SQLALCHEMY_DATABASE_URI": "sqlite://",
        "SECRET_KEY": "testing",
        "DATA_DIR": str(tmp_path / "data"),
        "RUNS_DIR": str(tmp_path / "runs"),
    }
    return create_app(test_config)


@pytest.fixture(scope="function")
def test_client(flask_app):
    with flask_app.test_client() as testing_client:
        with flask_app.app_context():
            yield testing_client


@pytest.fixture(scope="function")
def cli_runner(flask_app):
    with flask_app.app_context():
        yield flask_app.test_cli_runner()


@pytest.fixture
def micro_params():
    return HyperParameters(
        model_dim=8,
        llm_dim=16,
        n_heads=2,
        n_layers=2,
        ff_mult=2,
        lora_rank=4,
        lora_alpha=8.0,
        lora_dropout=0.0,
        batch_size=4,
        grad_accumulation=1,
        epochs=1,
        beam_width=2,
        max_decode_len=8,
        window_width=8,
        window_stride=4,
        emotion_interval=4,
    )


@pytest.fixture
def experiment_params(micro_params):
    # With the tied head frozen, near-zero loss needs llm_dim >= 64
    return micro_params.replace(
        model_dim=32,
        llm_dim=64,
        n_heads=4,
        lora_rank=16,
        lora_alpha=32.0,
        label_smoothing=0.0,
        peak_lr=1e-2,
        warmup_ratio=0.05,
        batch_size=8,
        beam_width=5,
    )


@pytest.fixture
def micro_spec():
    # T=20 gives stream lengths (20, 4, 5)
    return DatasetSpec(
        frames=20,
        feature_dim=6,
        n_pairs=2,
        margin=3.0,
        window_width=8,
        window_stride=4,
        emotion_interval=4,
        train_per_class=2,
        test_per_class=1,
        exemplars=2,
    )


@pytest.fixture
def micro_template():
    return prompt_template(2)


@pytest.fixture
def micro_vocab(micro_template):
    classes = sentence_classes(2)
    return Vocabulary.build([c.target for c in classes] + micro_template.texts())


@pytest.fixture
def dataset_dir(tmp_path, micro_spec):
    from app.domain.dataset import generate_ambiguity_dataset

    out = tmp_path / "dataset"
    generate_ambiguity_dataset(micro_spec, 0, out)
    return out


def _numerical_grad(fn, tensor, h):
    grad = torch.zeros_like(tensor)
    flat = tensor.data.view(-1)
    for i in range(flat.numel()):
        original = flat[i].item()
        flat[i] = original + h
        plus = fn().item()
        flat[i] = original - h
        minus = fn().item()
        flat[i] = original
        grad.view(-1)[i] = (plus - minus) / (2 * h)
    return grad


@pytest.fixture
def grad_check():
    """Largest norm-wise relative error between autograd and central differences.

    fn is a zero-argument closure returning a scalar; tensors are the float64
    leaves it reads.
    """

    def check(fn, tensors, h=1e-5):
        for t in tensors:
            t.grad = None
        fn().backward()
        worst = 0.0
        for t in tensors:
            analytic = t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t)
            numeric = _numerical_grad(fn, t, h)
            scale = max(float(analytic.norm() + numeric.norm()), 1e-8)
            worst = max(worst, float((analytic - numeric).norm()) / scale)
        return worst

    return check
