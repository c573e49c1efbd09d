// Regenerates tests/fixtures/completions.json and golden_results.json by
// running the fixture dictionary through the mock provider and recording
// every completion. Run after changing prompts or fixtures, then review the
// diff of the golden file by hand.
#include <cstdio>
#include <memory>

#include "cdemap/pipeline.hpp"
#include "cdemap/providers.hpp"
#include "cdemap/reservoir.hpp"
#include "fixture_env.hpp"

using namespace cdemap;
using namespace cdemap::testing;

int main() {
    const FixtureEnv& env = fixture_env();
    auto mock = std::make_shared<MockLLMProvider>(read_json(fixture_path("answers.json")));
    RecordingLLMProvider recorder(mock);

    auto ctx = env.context(recorder);
    auto results = map_dictionary(env.dictionary, ctx, 1);
    write_results(fixture_path("golden_results.json"), results, env.kb.store, ResultFormat{});

    // Second pass with a reservoir so judge prompts are recorded too.
    Reservoir reservoir(&env.kb.store, counting_clock());
    auto judged = env.context(recorder, &reservoir);
    map_dictionary(env.dictionary, judged, 1);

    recorder.replay().save(fixture_path("completions.json"));
    std::printf("%zu entries, %zu recorded completions\n", results.size(), recorder.replay().completions().size());
    return 0;
}
