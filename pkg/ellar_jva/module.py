import typing as t

from ellar.common import IModuleSetup, Module
from ellar.core import Config, ModuleSetup
from ellar.core.modules import DynamicModule, ModuleBase, ModuleRefBase
from ellar.di import ProviderConfig

from ellar_jva.constants import JVA_CONFIG_KEY
from ellar_jva.schemas import JvaSetup
from ellar_jva.services import JvaService


@Module(exports=[JvaService], name="EllarJvaModule")
class JvaModule(ModuleBase, IModuleSetup):
    @classmethod
    def setup(cls, **kwargs: t.Any) -> DynamicModule:
        schema = JvaSetup(**kwargs)
        return DynamicModule(
            cls,
            providers=[ProviderConfig(JvaService, use_value=JvaService(schema))],
        )

    @classmethod
    def register_setup(cls) -> ModuleSetup:
        return ModuleSetup(cls, inject=[Config], factory=cls.__register_setup_factory)

    @staticmethod
    def __register_setup_factory(module_ref: ModuleRefBase, config: Config) -> DynamicModule:
        jva_config = config.get(JVA_CONFIG_KEY)
        if jva_config and isinstance(jva_config, dict):
            schema = JvaSetup(**dict(jva_config))
            return DynamicModule(
                module_ref.module,
                providers=[ProviderConfig(JvaService, use_value=JvaService(schema))],
            )
        raise RuntimeError(f"Could not find `{JVA_CONFIG_KEY}` in application config.")
