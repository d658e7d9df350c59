from pathlib import Path

from rest_framework import serializers

from .data import SyntheticSpec
from .experiment import DatasetConfig, ExperimentConfig, MemoryConfig
from .hierarchy import SOURCES
from .losses import CombineWeights
from .memory import BUDGET_MODES, MIN_EXEMPLARS
from .models import ExperimentRun, PhaseRecord
from .network import SgdConfig
from .trainer import AblationFlags, TrainerConfig


class SyntheticSpecSerializer(serializers.Serializer):
    """Synthetic hierarchical dataset parameters"""

    coarse_groups = serializers.IntegerField(min_value=1, default=4)
    fine_per_group = serializers.IntegerField(min_value=1, default=3)
    dim = serializers.IntegerField(min_value=1, default=60)
    intra_spread = serializers.FloatField(min_value=0, default=2.0)
    inter_spread = serializers.FloatField(min_value=0, default=6.0)
    train_counts = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=1, default=[300, 150, 75]
    )
    test_per_class = serializers.IntegerField(min_value=1, default=50)
    noise = serializers.FloatField(min_value=0, default=5.0)
    seed = serializers.IntegerField(min_value=0, default=1993)

    def validate(self, attrs):
        if attrs["intra_spread"] <= 0 or attrs["inter_spread"] <= 0:
            raise serializers.ValidationError("spreads must be positive")
        return attrs


class DatasetSerializer(serializers.Serializer):
    """Either a synthetic spec or a CSV file with its JSON schema"""

    source = serializers.ChoiceField(choices=["synthetic", "csv"], default="synthetic")
    synthetic = SyntheticSpecSerializer(required=False)
    path = serializers.CharField(required=False, allow_null=True, default=None)
    schema = serializers.CharField(required=False, allow_null=True, default=None)

    def validate(self, attrs):
        if attrs["source"] == "csv" and not (attrs.get("path") and attrs.get("schema")):
            raise serializers.ValidationError("csv datasets need both 'path' and 'schema'")
        if attrs["source"] == "synthetic" and "synthetic" not in attrs:
            attrs["synthetic"] = SyntheticSpecSerializer(data={}).to_internal_value({})
        return attrs


class SplitSerializer(serializers.Serializer):
    n = serializers.IntegerField(min_value=1)
    m = serializers.IntegerField(min_value=1)


class MemorySerializer(serializers.Serializer):
    mode = serializers.ChoiceField(choices=list(BUDGET_MODES), default="per_class")
    size = serializers.IntegerField(min_value=MIN_EXEMPLARS, default=20)


class SgdSerializer(serializers.Serializer):
    learning_rate = serializers.FloatField(min_value=0)
    momentum = serializers.FloatField(min_value=0, max_value=0.999999)
    weight_decay = serializers.FloatField(min_value=0)
    epochs = serializers.IntegerField(min_value=0)
    batch_size = serializers.IntegerField(min_value=1)
    milestones = serializers.ListField(child=serializers.IntegerField(min_value=0))
    gamma = serializers.FloatField(min_value=0, max_value=1)

    def __init__(self, *args, defaults: SgdConfig = SgdConfig(), **kwargs):
        super().__init__(*args, **kwargs)
        for name, field in self.fields.items():
            field.required = False
            value = getattr(defaults, name)
            field.default = list(value) if isinstance(value, tuple) else value

    def validate_learning_rate(self, value):
        if value <= 0:
            raise serializers.ValidationError("learning rate must be > 0")
        return value

    def validate_gamma(self, value):
        if value <= 0:
            raise serializers.ValidationError("gamma must be > 0")
        return value


class WeightsSerializer(serializers.Serializer):
    """beta (soft-label sharpness), alpha (distillation), temperature, lambda"""

    beta = serializers.FloatField(default=20.0)
    alpha = serializers.FloatField(default=1.0)
    temperature = serializers.FloatField(default=2.0)
    lambda_override = serializers.FloatField(
        min_value=0, max_value=1, required=False, allow_null=True, default=None
    )
    swap_lambda = serializers.BooleanField(default=False)

    def validate(self, attrs):
        for name in ("beta", "alpha", "temperature"):
            if attrs[name] <= 0:
                raise serializers.ValidationError({name: "must be > 0"})
        return attrs


class FlagsSerializer(serializers.Serializer):
    use_cls = serializers.BooleanField(default=True)
    use_cb = serializers.BooleanField(default=True)
    use_kd = serializers.BooleanField(default=True)
    use_mg = serializers.BooleanField(default=True)
    use_decoupling = serializers.BooleanField(default=True)
    hierarchy_mode = serializers.ChoiceField(choices=list(SOURCES), default="ontology")

    def validate(self, attrs):
        if attrs["use_mg"] and attrs["hierarchy_mode"] == "none":
            raise serializers.ValidationError("use_mg requires a hierarchy_mode other than 'none'")
        return attrs


def _nested(serializer_class, raw, field_name: str, **kwargs):
    serializer = serializer_class(data=raw if raw is not None else {}, **kwargs)
    if not serializer.is_valid():
        raise serializers.ValidationError({field_name: serializer.errors})
    return serializer.validated_data


class ExperimentConfigSerializer(serializers.Serializer):
    """
    Validate an experiment config dict and build an ``ExperimentConfig``.
    Every section is optional except ``split``.
    """

    name = serializers.CharField(max_length=100, default="mgrb")
    seed = serializers.IntegerField(min_value=0, default=1993)
    split = SplitSerializer()
    dataset = serializers.DictField(required=False, default=dict)
    memory = serializers.DictField(required=False, default=dict)
    network = serializers.DictField(required=False, default=dict)
    train = serializers.DictField(required=False, default=dict)
    retrain = serializers.DictField(required=False, default=dict)
    weights = serializers.DictField(required=False, default=dict)
    flags = serializers.DictField(required=False, default=dict)
    k = serializers.IntegerField(min_value=1, default=4)
    ratio = serializers.FloatField(min_value=0, max_value=1, default=0.9)
    warmup_epochs = serializers.IntegerField(min_value=0, default=1)
    output_dir = serializers.CharField(required=False, allow_null=True, default=None)

    def validate_ratio(self, value):
        if not 0 < value < 1:
            raise serializers.ValidationError("ratio must be strictly between 0 and 1")
        return value

    def validate_network(self, value):
        hidden = value.get("hidden_sizes", [64, 64])
        if not isinstance(hidden, list) or not all(isinstance(h, int) and h > 0 for h in hidden):
            raise serializers.ValidationError("hidden_sizes must be a list of positive integers")
        return {"hidden_sizes": hidden}

    def validate(self, attrs):
        attrs["dataset"] = _nested(DatasetSerializer, attrs["dataset"], "dataset")
        attrs["memory"] = _nested(MemorySerializer, attrs["memory"], "memory")
        attrs["train"] = _nested(SgdSerializer, attrs["train"], "train")
        attrs["retrain"] = _nested(
            SgdSerializer, attrs["retrain"], "retrain",
            defaults=SgdConfig(learning_rate=0.01, epochs=10),
        )
        attrs["weights"] = _nested(WeightsSerializer, attrs["weights"], "weights")
        attrs["flags"] = _nested(FlagsSerializer, attrs["flags"], "flags")

        memory, synthetic = attrs["memory"], attrs["dataset"].get("synthetic")
        if memory["mode"] == "total" and attrs["dataset"]["source"] == "synthetic":
            classes = synthetic["coarse_groups"] * synthetic["fine_per_group"]
            if memory["size"] < MIN_EXEMPLARS * classes:
                raise serializers.ValidationError(
                    {"memory": [f"total size must be at least {MIN_EXEMPLARS * classes} for {classes} classes"]}
                )
        return attrs

    def create(self, validated_data) -> ExperimentConfig:
        dataset = validated_data["dataset"]
        synthetic = dataset.get("synthetic")
        weights = validated_data["weights"]
        trainer = TrainerConfig(
            hidden_sizes=tuple(validated_data["network"].get("hidden_sizes", [64, 64])),
            train=_sgd(validated_data["train"]),
            retrain=_sgd(validated_data["retrain"]),
            ratio=validated_data["ratio"],
            k=validated_data["k"],
            warmup_epochs=validated_data["warmup_epochs"],
            weights=CombineWeights(
                beta=weights["beta"],
                alpha=weights["alpha"],
                temperature=weights["temperature"],
                lam=weights.get("lambda_override"),
                swap_lambda=weights["swap_lambda"],
            ),
            flags=AblationFlags(**validated_data["flags"]),
        )
        output_dir = validated_data.get("output_dir")
        return ExperimentConfig(
            name=validated_data["name"],
            seed=validated_data["seed"],
            n=validated_data["split"]["n"],
            m=validated_data["split"]["m"],
            dataset=DatasetConfig(
                source=dataset["source"],
                synthetic=SyntheticSpec(
                    **{**synthetic, "train_counts": tuple(synthetic["train_counts"])}
                )
                if synthetic
                else None,
                path=Path(dataset["path"]) if dataset.get("path") else None,
                schema=Path(dataset["schema"]) if dataset.get("schema") else None,
            ),
            memory=MemoryConfig(**validated_data["memory"]),
            trainer=trainer,
            output_dir=Path(output_dir) if output_dir else None,
        )


def _sgd(data) -> SgdConfig:
    return SgdConfig(**{**data, "milestones": tuple(data["milestones"])})


class PhaseRecordSerializer(serializers.ModelSerializer):
    """Phase metrics without the confusion matrix"""

    class Meta:
        model = PhaseRecord
        fields = [
            "phase",
            "n_old",
            "n_new",
            "accuracy",
            "old_accuracy",
            "new_accuracy",
            "average_incremental_accuracy",
            "per_class_accuracy",
        ]


class PhaseDetailSerializer(serializers.ModelSerializer):
    class Meta:
        model = PhaseRecord
        fields = PhaseRecordSerializer.Meta.fields + ["confusion", "train_counts"]


class ExperimentRunSerializer(serializers.ModelSerializer):
    class Meta:
        model = ExperimentRun
        fields = [
            "run_id",
            "name",
            "seed",
            "n",
            "m",
            "last_accuracy",
            "average_incremental_accuracy",
            "output_dir",
            "created_at",
        ]


class ExperimentRunDetailSerializer(serializers.ModelSerializer):
    phases = PhaseRecordSerializer(many=True, read_only=True)

    class Meta:
        model = ExperimentRun
        fields = ExperimentRunSerializer.Meta.fields + ["config", "class_names", "phases"]
