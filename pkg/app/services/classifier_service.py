import hashlib
import logging
import math
import threading
from contextlib import contextmanager
from typing import Iterator, List, Optional

import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, TensorDataset

from app.core.config import resolve_device
from app.core.errors import ArgumentError, NumericError, TrainingError
from app.models.classifier import ConvClassifier
from app.schemas.classifier import ClassifierMetrics, ClassifierSpec, TrainingHyper
from app.schemas.dataset import LabeledImageSet

logger = logging.getLogger(__name__)

EVAL_BATCH = 512


class FrozenClassifier:
    """
    Обученный классификатор в режиме eval: dropout выключен, batch-norm
    использует накопленную статистику. Веса никогда не обновляются:
    requires_grad у них выключен везде, кроме пробы градиента по весам.

    Пробы не оборачиваются в no_grad: если на вход пришёл тензор с графом
    (выход генератора), градиент проходит сквозь классификатор к генератору.
    """

    def __init__(
        self,
        model: ConvClassifier,
        metrics: Optional[ClassifierMetrics] = None,
    ):
        self.model = model.eval().requires_grad_(False)
        self.spec: ClassifierSpec = model.spec
        self.metrics = metrics
        self._grad_lock = threading.Lock()

    @contextmanager
    def _weights_tracked(self) -> Iterator[None]:
        # requires_grad у весов включён только на время построения графа
        with self._grad_lock, torch.enable_grad():
            self.model.requires_grad_(True)
            try:
                yield
            finally:
                self.model.requires_grad_(False)

    @property
    def device(self) -> torch.device:
        return next(self.model.parameters()).device

    @property
    def parameters(self) -> List[torch.nn.Parameter]:
        return list(self.model.parameters())

    def _check_images(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4 or tuple(images.shape[1:]) != tuple(self.spec.input_shape):
            raise ArgumentError(
                f"Expected images of shape (B, {', '.join(map(str, self.spec.input_shape))}), got {tuple(images.shape)}"
            )
        return images.to(self.device)

    def _check_labels(self, labels: torch.Tensor, count: int) -> torch.Tensor:
        if labels.dim() != 1 or labels.shape[0] != count:
            raise ArgumentError(
                f"Expected {count} labels, got shape {tuple(labels.shape)}"
            )
        if labels.numel() and (
            labels.min().item() < 0 or labels.max().item() >= self.spec.num_classes
        ):
            raise ArgumentError(
                f"Labels must lie in [0, {self.spec.num_classes})"
            )
        return labels.to(self.device)

    def logits(self, images: torch.Tensor) -> torch.Tensor:
        return self.model(self._check_images(images))

    def predict_proba(self, images: torch.Tensor) -> torch.Tensor:
        return F.softmax(self.logits(images), dim=1)

    def penultimate_features(self, images: torch.Tensor) -> torch.Tensor:
        return self.model.features(self._check_images(images))

    def weight_grad_norm_tensor(
        self,
        images: torch.Tensor,
        labels: torch.Tensor,
        create_graph: bool = False,
    ) -> torch.Tensor:
        """
        Глобальная L2-норма градиента CE по всем весам классификатора.
        С create_graph=True результат дифференцируем по images (второй порядок).
        """
        images = self._check_images(images)
        if images.shape[0] == 0:
            raise ArgumentError("Gradient probe needs a non-empty batch")
        labels = self._check_labels(labels, images.shape[0])

        with self._weights_tracked():
            loss = F.cross_entropy(self.model(images), labels)
            grads = torch.autograd.grad(
                loss, self.parameters, create_graph=create_graph
            )
            squared = torch.stack([g.pow(2).sum() for g in grads]).sum()
            norm = torch.sqrt(squared)

        if not torch.isfinite(norm):
            raise NumericError("Non-finite weight gradient norm")
        return norm

    def weight_grad_norm(self, images: torch.Tensor, labels: torch.Tensor) -> float:
        """||grad_theta CE(f(images), labels)||_2; веса не меняются."""
        images = self._check_images(images).detach()
        return float(self.weight_grad_norm_tensor(images, labels).item())

    def input_gradient_norms(self, images: torch.Tensor) -> torch.Tensor:
        """Поэлементная L2-норма градиента max-логита по входу, shape (B,)."""
        images = self._check_images(images).detach().requires_grad_(True)
        with self._grad_lock, torch.enable_grad():
            max_logits = self.model(images).max(dim=1).values
            (grad,) = torch.autograd.grad(max_logits.sum(), images)
        return grad.flatten(start_dim=1).norm(dim=1).detach()

    def weights_checksum(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in self.model.state_dict().items():
            digest.update(name.encode("utf-8"))
            digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        return digest.hexdigest()


def accuracy(clf: FrozenClassifier, image_set: LabeledImageSet) -> float:
    correct = 0
    with torch.no_grad():
        for start in range(0, image_set.count, EVAL_BATCH):
            images = image_set.images[start : start + EVAL_BATCH]
            labels = image_set.labels[start : start + EVAL_BATCH].to(clf.device)
            correct += (clf.logits(images).argmax(dim=1) == labels).sum().item()
    return correct / max(image_set.count, 1)


def train_classifier(
    spec: ClassifierSpec,
    train: LabeledImageSet,
    hyper: TrainingHyper,
    seed: int,
    test: Optional[LabeledImageSet] = None,
    device: Optional[torch.device] = None,
) -> FrozenClassifier:
    """
    Обычное обучение классификатора (Adam), ранняя остановка, когда точность
    на обучающем наборе перестаёт расти. Возвращает замороженную модель.
    """
    if train.count == 0:
        raise ArgumentError("Training set is empty")
    if spec.num_classes != train.num_classes:
        raise ArgumentError(
            f"Spec has {spec.num_classes} classes but {train.name} has {train.num_classes}"
        )
    if tuple(spec.input_shape) != train.image_shape:
        raise ArgumentError(
            f"Spec input shape {spec.input_shape} does not match {train.image_shape}"
        )

    device = device or resolve_device()
    torch.manual_seed(seed)
    model = ConvClassifier(spec).to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=hyper.lr)

    loader = DataLoader(
        TensorDataset(train.images, train.labels),
        batch_size=hyper.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(seed),
        # batch-norm не принимает пачку из одного элемента
        drop_last=train.count % hyper.batch_size == 1,
    )

    logger.info(
        f"Training classifier on {train.name} ({train.count} samples) for up to {hyper.max_epochs} epochs, device={device}"
    )

    best_accuracy = -1.0
    stale_epochs = 0
    epoch = 0
    epoch_loss = float("nan")
    for epoch in range(1, hyper.max_epochs + 1):
        model.train()
        running_loss = 0.0
        correct = 0
        seen = 0
        for images, labels in loader:
            images, labels = images.to(device), labels.to(device)
            optimizer.zero_grad()
            logits = model(images)
            loss = F.cross_entropy(logits, labels)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"Classifier training diverged at epoch {epoch}", epoch=epoch
                )
            loss.backward()
            optimizer.step()

            running_loss += loss.item() * labels.shape[0]
            correct += (logits.argmax(dim=1) == labels).sum().item()
            seen += labels.shape[0]

        epoch_loss = running_loss / seen
        epoch_accuracy = correct / seen
        logger.info(
            f"Epoch {epoch}: loss={epoch_loss:.4f}, running train accuracy={epoch_accuracy:.4f}"
        )

        if epoch_accuracy > best_accuracy + hyper.min_delta:
            best_accuracy = epoch_accuracy
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= hyper.patience:
                logger.info(f"Train accuracy plateaued, stopping after epoch {epoch}")
                break

    for parameter in model.parameters():
        parameter.grad = None
    clf = FrozenClassifier(model)
    train_accuracy = accuracy(clf, train)
    test_accuracy = accuracy(clf, test) if test is not None else None
    clf.metrics = ClassifierMetrics(
        train_accuracy=train_accuracy,
        test_accuracy=test_accuracy,
        epochs=epoch,
        final_loss=epoch_loss if math.isfinite(epoch_loss) else None,
    )
    logger.info(
        f"Classifier frozen: train accuracy={train_accuracy:.4f}, test accuracy={test_accuracy}"
    )
    return clf
