"""Network definitions: the grid UNet, the fusion UNet and their shared layers."""
