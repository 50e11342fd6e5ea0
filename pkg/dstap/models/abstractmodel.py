class AbstractModel(object):
    """Common interface of the localizers: anything that maps heatmap tensors to positions."""

    def __init__(self, configs, name):
        self.configs = configs
        self.name = name

    # @abstractmethod
    def train(self, *args, **kwargs):
        raise NotImplementedError

    # @abstractmethod
    def predict(self, tensors, **kwargs):
        """(N, n_bins, n_theta, n_phi) linear heatmaps -> (N, 3) positions in meters."""
        raise NotImplementedError
