import torch
import torch.nn as nn

from app.schemas.classifier import ClassifierSpec


class ConvClassifier(nn.Module):
    """
    Conv-блоки (conv -> batch-norm -> leaky-relu -> max-pool -> dropout),
    затем полносвязные слои; последний слой отдаёт логиты.
    """

    def __init__(self, spec: ClassifierSpec):
        super().__init__()
        self.spec = spec

        layers = []
        in_channels = spec.input_shape[0]
        for block in spec.conv_blocks:
            layers += [
                nn.Conv2d(
                    in_channels,
                    block.out_channels,
                    kernel_size=block.kernel,
                    stride=block.stride,
                    padding=block.kernel // 2,
                ),
                nn.BatchNorm2d(block.out_channels),
                nn.LeakyReLU(spec.leaky_slope),
                nn.MaxPool2d(2, ceil_mode=True),
                nn.Dropout(spec.dropout_rate),
            ]
            in_channels = block.out_channels
        self.conv = nn.Sequential(*layers)

        self.conv.eval()
        with torch.no_grad():
            flat_dim = self.conv(torch.zeros(1, *spec.input_shape)).numel()
        self.conv.train()

        hidden = []
        width_in = flat_dim
        for width in spec.fc_widths[:-1]:
            hidden += [
                nn.Linear(width_in, width),
                nn.LeakyReLU(spec.leaky_slope),
                nn.Dropout(spec.dropout_rate),
            ]
            width_in = width
        self.hidden = nn.Sequential(*hidden)
        self.head = nn.Linear(width_in, spec.fc_widths[-1])

    def features(self, x: torch.Tensor) -> torch.Tensor:
        # Активации последнего скрытого FC-слоя
        return self.hidden(torch.flatten(self.conv(x), start_dim=1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))
