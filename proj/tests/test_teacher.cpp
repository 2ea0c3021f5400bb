#include <doctest.h>

#include <cmath>

#include "reg/rng.hpp"
#include "reg/synthdata.hpp"
#include "reg/teacher.hpp"

using namespace reg;

TEST_CASE("teacher is deterministic and codebook well separated") {
    const TeacherSpec t1 = make_teacher(8, 64, 4, 2, 23);
    const TeacherSpec t2 = make_teacher(8, 64, 4, 2, 23);
    CHECK(t1.codebook == t2.codebook);
    CHECK(t1.patch_proj == t2.patch_proj);

    for (int a = 0; a < t1.num_classes; ++a) {
        CHECK(norm2(t1.codebook_row(a).data(), static_cast<std::size_t>(t1.d_vf)) ==
              doctest::Approx(1.0).epsilon(1e-12));
        for (int b = a + 1; b < t1.num_classes; ++b)
            CHECK(std::abs(dot(t1.codebook_row(a).data(), t1.codebook_row(b).data(),
                               static_cast<std::size_t>(t1.d_vf))) <= 0.2);
    }
}

TEST_CASE("encode determinism and unit-norm cls token") {
    const TeacherSpec teacher = make_teacher(8, 64, 4, 2, 23);
    const MixtureSpec spec = default_desk_spec();
    Rng rng(3);
    const SampleBatch b = sample_batch(spec, 4, rng);
    for (int i = 0; i < b.batch; ++i) {
        const TeacherFeatures fa = teacher_encode(teacher, b.row(i), b.label[i]);
        const TeacherFeatures fb = teacher_encode(teacher, b.row(i), b.label[i]);
        CHECK(fa.f0 == fb.f0);
        CHECK(fa.cls0 == fb.cls0);
        CHECK(norm2(fa.cls0.data(), fa.cls0.size()) ==
              doctest::Approx(1.0).epsilon(1e-12));
        // F0 layout: rows 0..N-1 = f0, row N = cls0.
        for (std::size_t q = 0; q < fa.f0.size(); ++q) CHECK(fa.F0[q] == fa.f0[q]);
        for (std::size_t q = 0; q < fa.cls0.size(); ++q)
            CHECK(fa.F0[fa.f0.size() + q] == fa.cls0[q]);
    }
    CHECK_THROWS_AS(teacher_encode(teacher, b.row(0), 99), domain_error);
}

TEST_CASE("gamma=0 gives the raw codebook row") {
    TeacherSpec teacher = make_teacher(4, 32, 2, 2, 7);
    teacher.gamma = 0.0;
    const MixtureSpec spec = make_mixture_spec(4, 1, 2, 2, 0.1, 9);
    Rng rng(13);
    const SampleBatch b = sample_batch(spec, 2, rng);
    const TeacherFeatures f = teacher_encode(teacher, b.row(0), b.label[0]);
    auto code = teacher.codebook_row(b.label[0]);
    for (int q = 0; q < teacher.d_vf; ++q)
        CHECK(f.cls0[static_cast<std::size_t>(q)] ==
              doctest::Approx(code[q]).epsilon(1e-12));
}

TEST_CASE("cls token points at its own class codebook direction") {
    const TeacherSpec teacher = make_teacher(8, 64, 4, 2, 23);
    const MixtureSpec spec = default_desk_spec();
    Rng rng(101);
    const SampleBatch b = sample_batch(spec, 1000, rng);
    for (int i = 0; i < b.batch; ++i) {
        const TeacherFeatures f = teacher_encode(teacher, b.row(i), b.label[i]);
        const double own = dot(f.cls0.data(), teacher.codebook_row(b.label[i]).data(),
                               f.cls0.size());
        for (int other = 0; other < teacher.num_classes; ++other) {
            if (other == b.label[i]) continue;
            const double cross =
                dot(f.cls0.data(), teacher.codebook_row(other).data(), f.cls0.size());
            CHECK(cross < own);
        }
    }
}
